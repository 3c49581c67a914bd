"""
Configuration Management for the star-network toolkit
Loads settings from environment variables (prefix STARLD_) or .env with validation
"""
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class ToolkitConfig(BaseSettings):
    """Toolkit settings; CLI flags override them per run"""
    model_config = SettingsConfigDict(
        env_prefix="STARLD_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Output
    output_dir: str = Field(default="results", description="Directory for JSON/CSV results")
    log_dir: str = Field(default="logs", description="Directory for run-log sidecars")
    enable_run_log: bool = Field(default=True)

    # Execution
    threads: int = Field(default=1, ge=1, description="Worker processes for replications and multistarts")
    default_seed: int = Field(default=2004, ge=0)

    # Numerics
    zero_tol: float = Field(default=1e-12, ge=0, description="Occupancies at or below this count as empty")
    histogram_cap: int = Field(default=10000, ge=1)
    decay_batches: int = Field(default=20, ge=1, description="Time slices for the decay-rate jackknife")
    min_bin_visits: int = Field(default=30, ge=1, description="Entries a histogram bin needs to join the decay fit")

    def output_path(self, override=None) -> Path:
        path = Path(override or self.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path


# Global config instance
config = ToolkitConfig()
