"""
Timing and scoping helpers around numerical work.

``LogTimer`` and ``timed`` time a block or a function; ``log_context`` also tags the
records of the block with a run label; ``MetricsCollector`` aggregates verdicts and
per-point times across the worker threads of a sweep.
"""

import functools
import logging
import threading
import time
from collections import Counter, defaultdict
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, List, Optional, TypeVar

import numpy as np

from CaviLab.core.logging import get_logger, run_scope

F = TypeVar('F', bound=Callable[..., Any])


class LogTimer:
    """
    Times a block; ``duration`` is set on exit, also when the block raises.

    Example:
        with LogTimer("GCorr search", logger) as timer:
            search = gcorr_empirical_detail(model, qstar)
        timer.duration
    """

    def __init__(self, operation: str, logger: Optional[logging.Logger] = None, level: int = logging.DEBUG):
        self.operation = operation
        self.logger = logger or get_logger(__name__)
        self.level = level
        self._start: Optional[float] = None
        self.duration: Optional[float] = None

    def __enter__(self) -> 'LogTimer':
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.duration = time.perf_counter() - (self._start or time.perf_counter())
        if exc_type is None:
            self.logger.log(self.level, "%s took %.4f s", self.operation, self.duration)
        else:
            self.logger.error("%s failed after %.4f s: %s", self.operation, self.duration, exc_val)


def timed(operation: Optional[str] = None, logger: Optional[logging.Logger] = None,
          level: int = logging.DEBUG) -> Callable[[F], F]:
    """Decorator form of ``LogTimer``; the operation defaults to the function name."""
    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with LogTimer(operation or func.__name__, logger or get_logger(func.__module__), level):
                return func(*args, **kwargs)
        return wrapper  # type: ignore[return-value]
    return decorator


@contextmanager
def log_context(label: str, logger: Optional[logging.Logger] = None) -> Iterator[None]:
    """Log entry and exit of ``label`` and tag the records in between with it."""
    log = logger or get_logger(__name__)
    with run_scope(label):
        log.debug("Starting %s", label)
        try:
            yield
        except Exception as e:
            log.error("%s raised %s: %s", label, type(e).__name__, e)
            raise
        log.debug("Finished %s", label)


class MetricsCollector:
    """Thread-safe counters and timings with a logged summary."""

    def __init__(self, logger: Optional[logging.Logger] = None):
        self.logger = logger or get_logger(__name__)
        self._lock = threading.Lock()
        self._counts: Counter = Counter()
        self._timings: Dict[str, List[float]] = defaultdict(list)

    def increment(self, metric: str, value: int = 1) -> None:
        with self._lock:
            self._counts[metric] += value

    def record_timing(self, metric: str, duration: float) -> None:
        with self._lock:
            self._timings[metric].append(duration)

    def count(self, metric: str) -> int:
        return self._counts[metric]

    def summary(self) -> Dict[str, Any]:
        """Counts, and n/mean/min/max of every timing."""
        with self._lock:
            timings = {
                metric: {
                    "n": len(values),
                    "mean": float(np.mean(values)),
                    "min": float(np.min(values)),
                    "max": float(np.max(values)),
                }
                for metric, values in self._timings.items() if values
            }
            return {"counts": dict(self._counts), "timings": timings}

    def log_summary(self) -> None:
        summary = self.summary()
        for metric, count in sorted(summary["counts"].items()):
            self.logger.info("%s: %d", metric, count)
        for metric, stats in sorted(summary["timings"].items()):
            self.logger.info(
                "%s: n=%d mean=%.4fs min=%.4fs max=%.4fs",
                metric, stats["n"], stats["mean"], stats["min"], stats["max"]
            )

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()
            self._timings.clear()


__all__ = [
    'LogTimer',
    'timed',
    'log_context',
    'MetricsCollector',
]
