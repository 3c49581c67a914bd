"""Shared fixtures for the toolkit tests"""

import pytest

from src.model import fig4_network
from src.schemas import NetworkSpec


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale run (deselect with -m 'not slow')")


def single_route_network(lam: float = 1.0, mu: float = 1.0, c1: float = 2.0, c2: float = 3.0) -> NetworkSpec:
    """Two channels joined by one route: an M/M/1 queue with service μ·min(C_1, C_2)"""
    return NetworkSpec.model_validate(
        {
            "channels": [{"id": 1, "capacity": c1}, {"id": 2, "capacity": c2}],
            "routes": [{"i": 1, "j": 2, "lambda": lam, "mu": mu}],
        }
    )


@pytest.fixture
def fig4():
    return fig4_network(0.3)


@pytest.fixture
def fig4_builder():
    return fig4_network


@pytest.fixture
def single_route():
    return single_route_network()


@pytest.fixture
def single_route_builder():
    return single_route_network


@pytest.fixture
def four_channel():
    """N = 4 with routes 12, 34, 13, 14, 23, 24"""
    return NetworkSpec.model_validate(
        {
            "channels": [{"id": k, "capacity": 4.0} for k in (1, 2, 3, 4)],
            "routes": [
                {"i": i, "j": j, "lambda": 0.5, "mu": 1.0}
                for i, j in [(1, 2), (3, 4), (1, 3), (1, 4), (2, 3), (2, 4)]
            ],
        }
    )


@pytest.fixture
def isolated_run_settings(tmp_path, monkeypatch):
    """Point output and run logs at a temporary directory"""
    from src.config import config

    monkeypatch.setattr(config, "output_dir", str(tmp_path / "results"))
    monkeypatch.setattr(config, "log_dir", str(tmp_path / "logs"))
    return tmp_path
