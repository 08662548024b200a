"""
Experiment configuration for the command line.

An experiment is a JSON object; see docs/CONFIG.md for the schema. Parsing validates every
field up front and reports the first problem as a ``ConfigError`` naming the field.
"""

import itertools
import json
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from CaviLab.config import Config
from CaviLab.core.divergences import density_from_dict
from CaviLab.core.exceptions import CaviLabError, ConfigError
from CaviLab.core.logging import get_logger
from CaviLab.core.models import (
    MeanFieldState,
    TargetModel,
    generate_data,
    initial_state,
    model_from_dict,
)
from CaviLab.core.scheduler import Lazy, Randomized, Schedule, schedule_from_dict

logger = get_logger(__name__)

_KNOWN_FIELDS = {
    "model", "model_file", "generate", "schedule", "init", "max_iter", "stop_tol", "seed",
    "stagnation_window", "output", "gcorr", "sweep", "oracle",
}


def _number(data: Dict[str, Any], key: str, name: str, default: Any, kind: type = float) -> Any:
    value = data.get(key)
    if value is None:
        return default
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"must be a number, got {value!r}", name)
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"must be an integer, got {value!r}", name)
        return int(value)
    return float(value)


def _seed(value: Any, name: str) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < 0 or value >= 2 ** 64:
        raise ConfigError(f"must be an unsigned 64-bit integer, got {value!r}", name)
    return value


@dataclass(frozen=True)
class GCorrOptions:
    r0: Optional[float] = None
    alphas: Tuple[float, ...] = Config.GCORR_ALPHAS
    budget: int = Config.GCORR_BUDGET
    seed: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GCorrOptions':
        if not isinstance(data, dict):
            raise ConfigError("must be an object", "gcorr")
        r0 = _number(data, "r0", "gcorr.r0", None)
        if r0 is not None and r0 <= 0.0:
            raise ConfigError("must be positive", "gcorr.r0")
        alphas = data.get("alphas", list(Config.GCORR_ALPHAS))
        if not isinstance(alphas, list) or not alphas or not all(
            isinstance(a, (int, float)) and not isinstance(a, bool) and 0.0 <= a <= 1.0 for a in alphas
        ):
            raise ConfigError("must be a non-empty list of numbers in [0, 1]", "gcorr.alphas")
        budget = _number(data, "budget", "gcorr.budget", Config.GCORR_BUDGET, int)
        if budget < 1:
            raise ConfigError("must be at least 1", "gcorr.budget")
        return cls(r0, tuple(float(a) for a in alphas), budget, _seed(data.get("seed"), "gcorr.seed"))


@dataclass(frozen=True)
class SweepOptions:
    """Grid over one or two model parameters, walked in row-major order."""

    parameters: Tuple[Tuple[str, Tuple[Any, ...]], ...]
    max_points: int = Config.SWEEP_MAX_POINTS

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SweepOptions':
        if not isinstance(data, dict):
            raise ConfigError("must be an object", "sweep")
        parameters = data.get("parameters")
        if not isinstance(parameters, dict):
            raise ConfigError("must map parameter names to grids", "sweep.parameters")
        if not 1 <= len(parameters) <= 2:
            raise ConfigError("sweeps cover one or two parameters", "sweep.parameters")
        max_points = _number(data, "max_points", "sweep.max_points", Config.SWEEP_MAX_POINTS, int)
        if max_points < 1:
            raise ConfigError("must be at least 1", "sweep.max_points")
        grids = tuple((name, cls._grid(name, spec)) for name, spec in parameters.items())
        return cls(grids, max_points)

    @staticmethod
    def _grid(name: str, spec: Any) -> Tuple[Any, ...]:
        where = f"sweep.parameters.{name}"
        if isinstance(spec, list):
            return tuple(spec)
        if isinstance(spec, dict):
            start = _number(spec, "start", f"{where}.start", None)
            stop = _number(spec, "stop", f"{where}.stop", None)
            num = _number(spec, "num", f"{where}.num", None, int)
            if start is None or stop is None or num is None:
                raise ConfigError("needs start, stop and num", where)
            if num < 0:
                raise ConfigError("must be non-negative", f"{where}.num")
            return tuple(float(v) for v in np.linspace(start, stop, num))
        raise ConfigError("must be a list of values or {start, stop, num}", where)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.parameters)

    @property
    def size(self) -> int:
        return int(np.prod([len(values) for _, values in self.parameters]))

    def points(self) -> List[Dict[str, Any]]:
        """Grid points in row-major order, the first parameter varying slowest."""
        return [
            dict(zip(self.names, combo))
            for combo in itertools.product(*(values for _, values in self.parameters))
        ]


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Attributes:
        model: inline model parameters ({"family": ..., ...}); None when data is generated
        generate: synthetic data request ({"family", "params", "seed"})
        schedule: updating scheme
        init: {"scale": number or per-block list} or {"state": [block densities]}
        max_iter: iteration budget of a run
        stop_tol: total D_{KL,1/2} at which a run stops
        seed: default seed for randomized schedules, data and searches
        stagnation_window: early stop on a flat total, None to disable
        output_dir: directory for CSV/JSON output
        gcorr: empirical search options
        sweep: parameter grid, required by the sweep command
        oracle: options of the oracle check
    """

    model: Optional[Dict[str, Any]]
    generate: Optional[Dict[str, Any]]
    schedule: Schedule
    init: Dict[str, Any] = field(default_factory=lambda: {"scale": Config.INIT_SCALE})
    max_iter: int = Config.MAX_ITER
    stop_tol: float = Config.STOP_TOL
    seed: Optional[int] = None
    stagnation_window: Optional[int] = None
    output_dir: str = "."
    gcorr: GCorrOptions = GCorrOptions()
    sweep: Optional[SweepOptions] = None
    oracle: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(
        cls, data: Dict[str, Any], base_dir: str = ".", seed_override: Optional[int] = None
    ) -> 'ExperimentConfig':
        """
        Validate and build.

        Raises:
            ConfigError: the first malformed field
        """
        if not isinstance(data, dict):
            raise ConfigError("the configuration must be a JSON object", "<root>")
        unknown = sorted(set(data) - _KNOWN_FIELDS)
        if unknown:
            raise ConfigError("unknown field", unknown[0])

        seed = _seed(data.get("seed"), "seed")
        if seed_override is not None:
            seed = _seed(seed_override, "--seed")

        model, generate = cls._model_source(data, base_dir, seed, seed_override is not None)

        schedule_data = data.get("schedule", {"kind": "parallel"})
        if isinstance(schedule_data, dict):
            schedule_data = cls._seeded_schedule(schedule_data, seed, seed_override is not None)
        schedule = schedule_from_dict(schedule_data)

        init = data.get("init", {"scale": Config.INIT_SCALE})
        if not isinstance(init, dict) or not ({"scale"} <= set(init) or {"state"} <= set(init)):
            raise ConfigError("must be {\"scale\": ...} or {\"state\": [...]}", "init")
        scale = init.get("scale")
        if "state" not in init and not (
            isinstance(scale, (int, float)) and not isinstance(scale, bool)
            or isinstance(scale, list) and all(isinstance(s, (int, float)) for s in scale)
        ):
            raise ConfigError("must be a number or a list of numbers", "init.scale")

        max_iter = _number(data, "max_iter", "max_iter", Config.MAX_ITER, int)
        if max_iter < 0:
            raise ConfigError("must be non-negative", "max_iter")
        stop_tol = _number(data, "stop_tol", "stop_tol", Config.STOP_TOL)
        if stop_tol < 0.0:
            raise ConfigError("must be non-negative", "stop_tol")
        window = _number(data, "stagnation_window", "stagnation_window", None, int)
        if window is not None and window < 1:
            raise ConfigError("must be positive", "stagnation_window")

        output = data.get("output", {})
        if not isinstance(output, dict) or not isinstance(output.get("dir", "."), str):
            raise ConfigError("must be {\"dir\": path}", "output.dir")

        gcorr = GCorrOptions.from_dict(data.get("gcorr", {}))
        if gcorr.seed is None or seed_override is not None:
            gcorr = replace(gcorr, seed=seed if seed is not None else 0)
        sweep = SweepOptions.from_dict(data["sweep"]) if "sweep" in data else None
        oracle = data.get("oracle", {})
        if not isinstance(oracle, dict):
            raise ConfigError("must be an object", "oracle")

        return cls(
            model=model,
            generate=generate,
            schedule=schedule,
            init=init,
            max_iter=max_iter,
            stop_tol=stop_tol,
            seed=seed,
            stagnation_window=window,
            output_dir=os.path.join(base_dir, output.get("dir", ".")),
            gcorr=gcorr,
            sweep=sweep,
            oracle=oracle,
        )

    @staticmethod
    def _model_source(
        data: Dict[str, Any], base_dir: str, seed: Optional[int], override: bool
    ) -> Tuple[Optional[Dict[str, Any]], Optional[Dict[str, Any]]]:
        sources = [key for key in ("model", "model_file", "generate") if key in data]
        if len(sources) != 1:
            raise ConfigError("exactly one of model, model_file or generate is required", "model")
        if "model" in data:
            if not isinstance(data["model"], dict) or "family" not in data["model"]:
                raise ConfigError("must be an object with a family", "model.family")
            return dict(data["model"]), None
        if "model_file" in data:
            path = os.path.join(base_dir, str(data["model_file"]))
            if not os.path.isfile(path):
                raise ConfigError(f"file not found: {path}", "model_file")
            try:
                with open(path, encoding="utf-8") as handle:
                    model = json.load(handle)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read {path}: {e}", "model_file") from e
            if not isinstance(model, dict) or "family" not in model:
                raise ConfigError("must hold a model object with a family", "model_file")
            return model, None
        generate = data["generate"]
        if not isinstance(generate, dict) or "family" not in generate:
            raise ConfigError("must be an object with a family", "generate.family")
        generate = dict(generate)
        if not isinstance(generate.setdefault("params", {}), dict):
            raise ConfigError("must be an object", "generate.params")
        if override or generate.get("seed") is None:
            generate["seed"] = seed
        if generate["seed"] is None:
            raise ConfigError("generated data requires a seed", "generate.seed")
        _seed(generate["seed"], "generate.seed")
        return None, generate

    @staticmethod
    def _seeded_schedule(data: Dict[str, Any], seed: Optional[int], override: bool) -> Dict[str, Any]:
        data = dict(data)
        if data.get("kind") == Randomized.kind and (override or data.get("seed") is None):
            data["seed"] = seed
        if data.get("kind") == Lazy.kind and isinstance(data.get("base"), dict):
            data["base"] = ExperimentConfig._seeded_schedule(data["base"], seed, override)
        return data

    def build_model(self, overrides: Optional[Dict[str, Any]] = None) -> TargetModel:
        """
        Model of this experiment, with sweep ``overrides`` applied to its parameters.

        Raises:
            ConfigError: invalid parameters, naming the model or generate field
        """
        overrides = overrides or {}
        try:
            if self.generate is not None:
                params = {**self.generate["params"], **overrides}
                return generate_data(self.generate["family"], params, self.generate["seed"])
            return model_from_dict({**self.model, **overrides})
        except CaviLabError as e:
            where = "generate" if self.generate is not None else "model"
            raise ConfigError(str(e), where) from e

    def build_init(self, model: TargetModel, qstar: MeanFieldState) -> MeanFieldState:
        """
        Raises:
            ConfigError: blocks that do not fit the model
        """
        try:
            if "state" in self.init:
                blocks = self.init["state"]
                if not isinstance(blocks, list):
                    raise ConfigError("must be a list of densities", "init.state")
                state = MeanFieldState(tuple(density_from_dict(block) for block in blocks))
                model.check_state(state)
                return state
            return initial_state(model, qstar, self.init["scale"])
        except ConfigError:
            raise
        except CaviLabError as e:
            raise ConfigError(str(e), "init") from e


def load_config(
    path: str, seed_override: Optional[int] = None, output_dir: Optional[str] = None
) -> ExperimentConfig:
    """
    Read and validate an experiment file; relative paths inside it resolve against its folder.

    Raises:
        ConfigError: unreadable file, invalid JSON or invalid fields
    """
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}", "--config") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}", "--config") from e
    config = ExperimentConfig.from_dict(data, os.path.dirname(os.path.abspath(path)), seed_override)
    if output_dir is not None:
        config = replace(config, output_dir=output_dir)
    logger.debug("Loaded experiment %s (schedule %s)", path, config.schedule.describe())
    return config


def load_oracle_options(path: Optional[str], seed_override: Optional[int] = None) -> Tuple[Dict[str, Any], int]:
    """
    ``oracle`` options and seed for the oracle check; the file is optional.

    Raises:
        ConfigError: unreadable file or malformed options
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e.strerror}", "--config") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}", "--config") from e
    if not isinstance(data, dict):
        raise ConfigError("the configuration must be a JSON object", "<root>")
    options = data.get("oracle", {})
    if not isinstance(options, dict):
        raise ConfigError("must be an object", "oracle")
    for key in ("pairs", "delta_pairs"):
        value = _number(options, key, f"oracle.{key}", 1, int)
        if value < 0:
            raise ConfigError("must be non-negative", f"oracle.{key}")
    for key in ("rtol", "atol"):
        if _number(options, key, f"oracle.{key}", 1.0) <= 0.0:
            raise ConfigError("must be positive", f"oracle.{key}")
    seed = _seed(seed_override if seed_override is not None else data.get("seed", 0), "seed")
    return options, seed or 0


__all__ = ['ExperimentConfig', 'GCorrOptions', 'SweepOptions', 'load_config', 'load_oracle_options']
