"""Run logging for reproducibility.

Every command invocation, its parameters and its result summary (or error)
are written as JSON Lines next to the results. Timestamps live only here, so
result files stay byte-identical across reruns.
"""

import json
import time
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from rich.console import Console

from src import __version__
from src.schemas import RunLogEntry

console = Console(stderr=True)


class RunLogger:
    """
    JSON Lines sidecar log for one CLI session.

    File-system failures print a warning and never abort the run.
    """

    def __init__(self, log_dir: str = "logs", session_id: Optional[str] = None, enabled: bool = True):
        """
        Initialize the run logger.

        Args:
            log_dir: Directory to store log files
            session_id: Unique session identifier
            enabled: Write nothing when False
        """
        self.enabled = enabled
        self.log_dir = Path(log_dir)
        self.session_id = session_id or self._generate_session_id()
        self.log_file = self.log_dir / f"run_{self.session_id}.jsonl"
        if self.enabled:
            self._initialize_log_file()

    @staticmethod
    def _generate_session_id() -> str:
        """Generate a unique session ID"""
        return datetime.now().strftime("%Y%m%d_%H%M%S_%f")

    def _append(self, record: str):
        if not self.enabled:
            return
        try:
            with open(str(self.log_file), "a", encoding="utf-8") as f:
                f.write(record + "\n")
        except OSError as e:
            console.print(f"[yellow]Warning: could not write to log file {self.log_file}: {e}[/yellow]")

    def _initialize_log_file(self):
        """Initialize the log file with session metadata"""
        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            console.print(f"[yellow]Warning: could not create log directory {self.log_dir}: {e}[/yellow]")
            return
        self._append(
            json.dumps(
                {
                    "event_type": "session_start",
                    "session_id": self.session_id,
                    "timestamp": datetime.now().isoformat(),
                    "version": __version__,
                }
            )
        )

    def log_command(
        self,
        command: str,
        parameters: Dict[str, Any],
        result: Optional[Dict[str, Any]] = None,
        error: Optional[str] = None,
        duration_s: Optional[float] = None,
    ):
        entry = RunLogEntry(
            command=command,
            parameters=parameters,
            result=result,
            error=error,
            duration_s=duration_s,
            session_id=self.session_id,
        )
        self._append(entry.model_dump_json())

    def log_warning(self, command: str, message: str, details: Optional[Dict[str, Any]] = None):
        """Log a non-fatal problem (e.g. a channel without enough histogram data)"""
        self._append(
            json.dumps(
                {
                    "event_type": "warning",
                    "timestamp": datetime.now().isoformat(),
                    "session_id": self.session_id,
                    "command": command,
                    "message": message,
                    "details": details or {},
                },
                default=str,
            )
        )
        console.print(f"[yellow]Warning ({command}): {message}[/yellow]")

    def get_session_summary(self) -> Dict[str, Any]:
        """Get summary statistics for the current session"""
        commands = succeeded = failed = warnings = 0
        try:
            with open(str(self.log_file), "r", encoding="utf-8") as f:
                for line in f:
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError:
                        continue
                    if entry.get("event_type") == "warning":
                        warnings += 1
                    elif entry.get("command"):
                        commands += 1
                        if entry.get("error"):
                            failed += 1
                        else:
                            succeeded += 1
        except FileNotFoundError:
            pass

        return {
            "session_id": self.session_id,
            "log_file": str(self.log_file),
            "commands": commands,
            "succeeded": succeeded,
            "failed": failed,
            "warnings": warnings,
        }

    @contextmanager
    def command_context(self, command: str, parameters: Dict[str, Any]):
        """
        Context manager for commands with automatic logging.

        Usage:
            with logger.command_context('rate', params) as ctx:
                report = run_rate(...)
                ctx.set_result(report)
        """

        class CommandContext:
            def __init__(self):
                self.result = None
                self.error = None

            def set_result(self, result):
                self.result = result

        ctx = CommandContext()
        started = time.perf_counter()
        try:
            yield ctx
        except Exception as e:
            ctx.error = f"{type(e).__name__}: {e}"
            raise
        finally:
            self.log_command(
                command=command,
                parameters=parameters,
                result=ctx.result,
                error=ctx.error,
                duration_s=round(time.perf_counter() - started, 6),
            )
