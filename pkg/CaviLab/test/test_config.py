"""
Tests for the library defaults.
"""

import pytest

from CaviLab.config import Config

pytestmark = pytest.mark.unit


def test_defaults():
    defaults = Config.get_config()
    assert defaults["STOP_TOL"] == 1e-12
    assert defaults["MAX_ITER"] == 1000
    assert defaults["DIVERGENCE_THRESHOLD"] == 1e12
    assert defaults["RATIO_FLOOR"] == pytest.approx(2.220446049250313e-14)
    assert defaults["THREADS"] >= 1


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("CAVI_LAB_THREADS", "3")
    assert Config.threads() == 3
    monkeypatch.setenv("CAVI_LAB_THREADS", "none")
    assert Config.threads() >= 1
    monkeypatch.setenv("CAVI_LAB_THREADS", "0")
    assert Config.threads() >= 1
