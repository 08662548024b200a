"""
Logging for CaviLab.

Every module logs through ``get_logger(__name__)``. ``auto_configure`` installs one of the
presets on the root logger:

- console records go to stderr, as colored text or as JSON lines, so subcommands that
  print JSON on stdout stay machine-readable
- files rotate under ``log_dir`` (``cavilab.log``, plus ``cavilab_errors.log`` for errors)

Records emitted inside ``run_scope(label)`` carry the label as ``%(run)s``; the worker
threads of a sweep each set their own, which keeps the lines of one grid point together.

Usage:
    from CaviLab.core.logging import get_logger, run_scope

    logger = get_logger(__name__)
    with run_scope("parallel run of gaussian_blocks"):
        logger.info("Stopped after %d iterations", n)
"""

import json
import logging
import logging.handlers
import math
import os
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Union

import numpy as np

LOG_FILE = "cavilab.log"
ERROR_LOG_FILE = "cavilab_errors.log"

CONSOLE_FORMAT = "%(asctime)s %(levelname)-8s %(name)s [%(run)s] %(message)s"
DETAILED_FORMAT = "%(asctime)s %(levelname)-8s %(name)s:%(lineno)d [%(run)s] %(message)s"
TESTING_FORMAT = "%(levelname)s [%(run)s] %(message)s"

_NO_RUN = "-"
_current_run: ContextVar[str] = ContextVar("cavilab_run", default=_NO_RUN)


@contextmanager
def run_scope(label: str) -> Iterator[None]:
    """Tag every record emitted in this block (and this thread) with ``label``."""
    token = _current_run.set(label)
    try:
        yield
    finally:
        _current_run.reset(token)


def current_run() -> str:
    return _current_run.get()


class RunFilter(logging.Filter):
    """Adds the ``run`` attribute the formats refer to."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = _current_run.get()
        return True


@dataclass(frozen=True)
class LogConfig:
    """
    Attributes:
        level: minimum level name (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: directory of the rotating files
        console_output: log to stderr
        file_output: log to ``LOG_FILE`` and ``ERROR_LOG_FILE``
        json_output: console records as JSON lines instead of text
        max_bytes: size at which a file rotates
        backup_count: rotated files kept
        format_string: text format, both for the console and the files
        date_format: ``asctime`` format
        component_levels: levels of individual loggers, e.g. a quieter scheduler
    """
    level: str = "INFO"
    log_dir: str = "./logs"
    console_output: bool = True
    file_output: bool = True
    json_output: bool = False
    max_bytes: int = 10 * 1024 * 1024
    backup_count: int = 5
    format_string: Optional[str] = None
    date_format: str = "%Y-%m-%d %H:%M:%S"
    component_levels: Dict[str, str] = field(default_factory=dict)

    @property
    def level_number(self) -> int:
        return level_number(self.level)

    def with_level(self, level: str) -> 'LogConfig':
        return replace(self, level=level)


def level_number(level: Union[str, int]) -> int:
    """
    Raises:
        ValueError: unknown level name
    """
    if isinstance(level, int):
        return level
    number = logging.getLevelName(level.upper())
    if not isinstance(number, int):
        raise ValueError(f"unknown log level {level!r}")
    return number


class ColoredFormatter(logging.Formatter):
    """Text formatter that colors the level name when stderr is a terminal."""

    ANSI = {
        logging.DEBUG: "36",
        logging.INFO: "32",
        logging.WARNING: "33",
        logging.ERROR: "31",
        logging.CRITICAL: "35",
    }

    def __init__(self, fmt: str, datefmt: Optional[str] = None, use_colors: Optional[bool] = None):
        super().__init__(fmt, datefmt)
        if use_colors is None:
            use_colors = sys.platform != 'win32' and sys.stderr.isatty()
        self.use_colors = use_colors

    def format(self, record: logging.LogRecord) -> str:
        code = self.ANSI.get(record.levelno)
        if not self.use_colors or code is None:
            return super().format(record)
        colored = logging.makeLogRecord(record.__dict__)
        colored.levelname = f"\033[{code}m{record.levelname}\033[0m"
        return super().format(colored)


def _plain(value: Any) -> Any:
    # numpy scalars and arrays, and non-finite floats, have no JSON form of their own
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class JsonFormatter(logging.Formatter):
    """
    One JSON object per record.

    Numbers passed as ``extra={'extra_data': {...}}`` are merged into the object; the
    scheduler attaches iteration counts and terminal divergences this way.
    """

    def format(self, record: logging.LogRecord) -> str:
        data: Dict[str, Any] = {
            'timestamp': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'run': getattr(record, 'run', _NO_RUN),
            'message': record.getMessage(),
        }
        if record.exc_info:
            data['exception'] = self.formatException(record.exc_info)
        extra = getattr(record, 'extra_data', None)
        if isinstance(extra, dict):
            data.update(_plain(extra))
        return json.dumps(data, default=str)


def _console_handler(config: LogConfig) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    if config.json_output:
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(ColoredFormatter(config.format_string or CONSOLE_FORMAT, config.date_format))
    return handler


def _file_handlers(config: LogConfig) -> List[logging.Handler]:
    Path(config.log_dir).mkdir(parents=True, exist_ok=True)
    formatter = logging.Formatter(config.format_string or DETAILED_FORMAT, config.date_format)
    handlers = []
    for name, level in ((LOG_FILE, None), (ERROR_LOG_FILE, logging.ERROR)):
        handler = logging.handlers.RotatingFileHandler(
            os.path.join(config.log_dir, name),
            maxBytes=config.max_bytes,
            backupCount=config.backup_count,
            encoding='utf-8'
        )
        handler.setFormatter(formatter)
        if level is not None:
            handler.setLevel(level)
        handlers.append(handler)
    return handlers


class LoggingManager:
    """
    Owns the handlers installed on the root logger.

    A singleton: reconfiguring replaces the handlers of the previous configuration and
    leaves handlers installed by others (pytest's, for instance) alone.
    """

    _instance: Optional['LoggingManager'] = None

    def __new__(cls):
        if cls._instance is None:
            instance = super().__new__(cls)
            instance._config = None
            instance._handlers = []
            cls._instance = instance
        return cls._instance

    @property
    def config(self) -> Optional[LogConfig]:
        return self._config

    def configure(self, config: LogConfig) -> None:
        """
        Raises:
            ValueError: unknown level in ``config``
            OSError: ``log_dir`` cannot be created
        """
        level = config.level_number
        component_levels = {name: level_number(value) for name, value in config.component_levels.items()}

        handlers: List[logging.Handler] = []
        if config.console_output:
            handlers.append(_console_handler(config))
        if config.file_output:
            handlers.extend(_file_handlers(config))

        root = logging.getLogger()
        for handler in self._handlers:
            root.removeHandler(handler)
            handler.close()
        run_filter = RunFilter()
        for handler in handlers:
            handler.addFilter(run_filter)
            if handler.level == logging.NOTSET:
                handler.setLevel(level)
            root.addHandler(handler)
        root.setLevel(level)
        for name, value in component_levels.items():
            logging.getLogger(name).setLevel(value)

        self._config = config
        self._handlers = handlers
        logging.getLogger(__name__).debug("Logging configured at %s", config.level)

    def get_logger(self, name: str) -> logging.Logger:
        return logging.getLogger(name)

    def set_level(self, level: Union[str, int]) -> None:
        """Move the root logger and the console and main-file handlers; the error file stays at ERROR."""
        number = level_number(level)
        logging.getLogger().setLevel(number)
        for handler in self._handlers:
            if handler.level != logging.ERROR:
                handler.setLevel(number)
        if self._config is not None:
            self._config = self._config.with_level(logging.getLevelName(number))


_logging_manager = LoggingManager()


def get_logger(name: str) -> logging.Logger:
    return _logging_manager.get_logger(name)


def configure_logging(config: LogConfig) -> None:
    _logging_manager.configure(config)


def get_logging_manager() -> LoggingManager:
    return _logging_manager


def create_development_config() -> LogConfig:
    """DEBUG everywhere except the per-iteration scheduler messages."""
    return LogConfig(
        level="DEBUG",
        log_dir="./logs/dev",
        max_bytes=5 * 1024 * 1024,
        backup_count=3,
        format_string=DETAILED_FORMAT,
        component_levels={"CaviLab.core.scheduler": "INFO"},
    )


def create_production_config() -> LogConfig:
    """Batch experiments: JSON lines on stderr, large rotating files."""
    return LogConfig(
        level="INFO",
        log_dir="./logs/prod",
        json_output=True,
        max_bytes=50 * 1024 * 1024,
        backup_count=10,
    )


def create_testing_config() -> LogConfig:
    return LogConfig(
        level="DEBUG",
        log_dir="./logs/test",
        file_output=False,
        format_string=TESTING_FORMAT,
    )


PRESETS: Dict[str, Callable[[], LogConfig]] = {
    "development": create_development_config,
    "production": create_production_config,
    "testing": create_testing_config,
}

_ALIASES = {"dev": "development", "prod": "production", "test": "testing"}


def _canonical(env: str) -> str:
    name = env.strip().lower()
    return _ALIASES.get(name, name)


def resolve_environment(env: Optional[str] = None) -> str:
    """Canonical preset name for ``env`` (or ``CAVI_LAB_ENV``); unknown names fall back to development."""
    if env is None:
        env = os.environ.get("CAVI_LAB_ENV", "development")
    name = _canonical(env)
    return name if name in PRESETS else "development"


def auto_configure(env: Optional[str] = None) -> str:
    """
    Install the preset for ``env``.

    Returns:
        The canonical name of the preset applied
    """
    requested = env if env is not None else os.environ.get("CAVI_LAB_ENV", "development")
    name = resolve_environment(requested)
    configure_logging(PRESETS[name]())
    if _canonical(requested) != name:
        get_logger(__name__).warning("Unknown logging environment %r, using %s", requested, name)
    return name


__all__ = [
    'CONSOLE_FORMAT',
    'DETAILED_FORMAT',
    'ERROR_LOG_FILE',
    'LOG_FILE',
    'PRESETS',
    'TESTING_FORMAT',
    'ColoredFormatter',
    'JsonFormatter',
    'LogConfig',
    'LoggingManager',
    'RunFilter',
    'auto_configure',
    'configure_logging',
    'create_development_config',
    'create_production_config',
    'create_testing_config',
    'current_run',
    'get_logger',
    'get_logging_manager',
    'level_number',
    'resolve_environment',
    'run_scope',
]
