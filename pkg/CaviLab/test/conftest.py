"""
Test configuration and fixtures for CaviLab tests.

Provides:
- Logging configured for tests
- Seeded random generators
- Reference models used across modules
- Experiment files in a temporary directory
- The command-line entry point
"""

import importlib.util
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List

import numpy as np
import pytest

from CaviLab.core.logging import auto_configure
from CaviLab.core.models import GaussianBlocks

ROOT = Path(__file__).resolve().parent.parent.parent


@dataclass
class TestSettings:
    """Shared constants of the test suite."""
    seed: int = 20240607
    reference_q: tuple = ((1.0, 0.5), (0.5, 1.0))
    stop_tol: float = 1e-12


@pytest.fixture(scope="session", autouse=True)
def testing_logging() -> None:
    """Testing preset: console only, no log files."""
    auto_configure("testing")


@pytest.fixture(scope="session")
def settings() -> TestSettings:
    return TestSettings()


@pytest.fixture(scope="function")
def rng(settings: TestSettings) -> np.random.Generator:
    """Fresh generator for each test."""
    return np.random.default_rng(settings.seed)


@pytest.fixture(scope="function")
def reference_gaussian(settings: TestSettings) -> GaussianBlocks:
    """Two scalar blocks with precision [[1, 0.5], [0.5, 1]]."""
    return GaussianBlocks([0.0, 0.0], settings.reference_q, (1, 1))


@pytest.fixture(scope="function")
def write_config(tmp_path: Path) -> Callable[..., str]:
    """Write an experiment JSON into tmp_path and return its path."""
    def write(data: Dict[str, Any], name: str = "experiment.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)
    return write


@pytest.fixture(scope="session")
def cli_main() -> Callable[[List[str]], int]:
    """``main`` of the root entry point, loaded from its file."""
    spec = importlib.util.spec_from_file_location("cavilab_entry", ROOT / "__main__.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module.main


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "unit: mark test as fast unit test"
    )
    config.addinivalue_line(
        "markers", "integration: mark test as integration test"
    )
    config.addinivalue_line(
        "markers", "performance: mark test as performance test"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
