"""
Unit tests for the logging system.

Tests cover:
- Presets, environment resolution and manual configuration
- Run labels on records
- JSON console records
- Timing and scoping helpers
- Metrics collection
"""

import json
import logging
import math

import numpy as np
import pytest

from CaviLab.core.logging import (
    ColoredFormatter,
    JsonFormatter,
    LogConfig,
    RunFilter,
    auto_configure,
    configure_logging,
    create_development_config,
    create_production_config,
    create_testing_config,
    current_run,
    get_logger,
    get_logging_manager,
    level_number,
    resolve_environment,
    run_scope,
)
from CaviLab.core.logging.utils import LogTimer, MetricsCollector, log_context, timed

pytestmark = pytest.mark.unit


@pytest.fixture
def restore_testing_preset():
    yield
    auto_configure("testing")


def make_record(message="run stopped after %d iterations", args=(12,)):
    return logging.LogRecord("CaviLab.core.scheduler", logging.INFO, __file__, 10, message, args, None)


class TestConfiguration:
    """Tests for presets and the manager."""

    def test_presets(self):
        assert create_testing_config().file_output is False
        assert create_development_config().component_levels == {"CaviLab.core.scheduler": "INFO"}
        assert create_production_config().json_output is True

    def test_resolve_environment(self, monkeypatch):
        assert resolve_environment("prod") == "production"
        assert resolve_environment(" Test ") == "testing"
        assert resolve_environment("staging") == "development"
        monkeypatch.setenv("CAVI_LAB_ENV", "dev")
        assert resolve_environment() == "development"

    def test_auto_configure_aliases(self, restore_testing_preset):
        assert auto_configure("test") == "testing"
        assert get_logging_manager().config.level == "DEBUG"

    def test_environment_variable(self, monkeypatch, restore_testing_preset):
        monkeypatch.setenv("CAVI_LAB_ENV", "testing")
        assert auto_configure() == "testing"

    def test_level_names(self):
        assert level_number("warning") == logging.WARNING
        assert level_number(logging.ERROR) == logging.ERROR
        with pytest.raises(ValueError):
            level_number("loud")
        with pytest.raises(ValueError):
            configure_logging(LogConfig(level="loud", file_output=False))

    def test_file_output(self, tmp_path, restore_testing_preset):
        configure_logging(LogConfig(level="INFO", log_dir=str(tmp_path), console_output=False))
        logger = get_logger("CaviLab.test")
        logger.info("fixed point reached")
        with run_scope("lazy run"):
            logger.error("fixed point failed")
        for handler in logging.getLogger().handlers:
            handler.flush()
        main_log = (tmp_path / "cavilab.log").read_text(encoding="utf-8")
        error_log = (tmp_path / "cavilab_errors.log").read_text(encoding="utf-8")
        assert "fixed point reached" in main_log
        assert "[lazy run] fixed point failed" in main_log
        assert "fixed point failed" in error_log
        assert "fixed point reached" not in error_log

    def test_set_level(self, restore_testing_preset):
        manager = get_logging_manager()
        manager.set_level("warning")
        assert logging.getLogger().level == logging.WARNING
        assert manager.config.level == "WARNING"
        manager.set_level(logging.DEBUG)
        assert logging.getLogger().level == logging.DEBUG

    def test_singleton(self):
        assert get_logging_manager() is type(get_logging_manager())()


class TestRunScope:
    """Tests for run labels."""

    def test_nesting(self):
        assert current_run() == "-"
        with run_scope("sweep"):
            with run_scope("point 3"):
                assert current_run() == "point 3"
            assert current_run() == "sweep"
        assert current_run() == "-"

    def test_filter_tags_records(self):
        record = make_record()
        with run_scope("parallel run of discrete2d"):
            assert RunFilter().filter(record)
        assert record.run == "parallel run of discrete2d"


class TestFormatters:
    """Tests for JSON lines and colored text."""

    def test_record_fields(self):
        record = make_record()
        record.run = "sequential run of gmm2"
        record.extra_data = {"terminal_divergence": 1e-13, "iterations": np.int64(12)}
        data = json.loads(JsonFormatter().format(record))
        assert data["message"] == "run stopped after 12 iterations"
        assert data["level"] == "INFO"
        assert data["run"] == "sequential run of gmm2"
        assert data["terminal_divergence"] == 1e-13
        assert data["iterations"] == 12

    def test_numpy_and_non_finite_values(self):
        record = make_record("diverged", ())
        record.extra_data = {"ratios": np.array([0.25, math.inf]), "bound": np.float64(math.nan)}
        data = json.loads(JsonFormatter().format(record))
        assert data["ratios"] == [0.25, "inf"]
        assert data["bound"] == "nan"

    def test_colors(self):
        record = make_record()
        plain = ColoredFormatter("%(levelname)s %(message)s", use_colors=False).format(record)
        colored = ColoredFormatter("%(levelname)s %(message)s", use_colors=True).format(record)
        assert plain == "INFO run stopped after 12 iterations"
        assert colored == "\033[32mINFO\033[0m run stopped after 12 iterations"
        assert record.levelname == "INFO"


class TestHelpers:
    """Tests for timers, scopes and metrics."""

    def test_log_timer(self, caplog):
        logger = get_logger("CaviLab.test.timer")
        with caplog.at_level(logging.DEBUG):
            with LogTimer("sweep", logger) as timer:
                pass
        assert timer.duration is not None and timer.duration >= 0.0
        assert "sweep took" in caplog.text

    def test_log_timer_failure(self, caplog):
        with caplog.at_level(logging.DEBUG):
            with pytest.raises(ValueError):
                with LogTimer("search", get_logger("CaviLab.test.timer")) as timer:
                    raise ValueError("empty neighborhood")
        assert timer.duration is not None
        assert "search failed after" in caplog.text

    def test_timed(self, caplog):
        @timed("square")
        def square(x):
            return x * x

        with caplog.at_level(logging.DEBUG):
            assert square(3) == 9
        assert "square took" in caplog.text

    def test_log_context(self, caplog):
        logger = get_logger("CaviLab.test.context")
        with caplog.at_level(logging.DEBUG):
            with log_context("parallel run", logger):
                assert current_run() == "parallel run"
            with pytest.raises(RuntimeError):
                with log_context("lazy run", logger):
                    raise RuntimeError("diverged")
        assert current_run() == "-"
        assert "Finished parallel run" in caplog.text
        assert "lazy run raised RuntimeError: diverged" in caplog.text

    def test_metrics(self, caplog):
        metrics = MetricsCollector(get_logger("CaviLab.test.metrics"))
        metrics.increment("verdict converged")
        metrics.increment("verdict converged", 2)
        metrics.record_timing("point", 0.5)
        metrics.record_timing("point", 1.5)
        assert metrics.count("verdict converged") == 3
        assert metrics.summary()["timings"]["point"] == {"n": 2, "mean": 1.0, "min": 0.5, "max": 1.5}
        with caplog.at_level(logging.INFO):
            metrics.log_summary()
        assert "verdict converged: 3" in caplog.text
        assert "mean=1.0000s" in caplog.text
        metrics.reset()
        assert metrics.count("verdict converged") == 0
        assert metrics.summary() == {"counts": {}, "timings": {}}
