"""
CAVI updating schemes and run drivers.

Schedules:
- ``Parallel``: every block updated from the same iterate
- ``Sequential(order)``: blocks updated in turn, each seeing its updated predecessors
- ``Randomized(seed)``: one uniformly chosen block per step
- ``Lazy(base, alpha)``: geometric mixture of the old block and the base update

Usage:
    from CaviLab.core.scheduler import Parallel, run

    trajectory = run(model, Parallel(), init, qstar, max_iter=100, stop_tol=1e-12)
"""

import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np

from CaviLab.config import Config
from CaviLab.core.divergences import geometric_mix, kl_weighted
from CaviLab.core.exceptions import CaviLabError, ConfigError, ParameterError
from CaviLab.core.logging import get_logger
from CaviLab.core.models import MeanFieldState, TargetModel
from CaviLab.core.scheduler.trajectory import DiagnosticRow, RunOutcome, Trajectory

logger = get_logger(__name__)


class Schedule(ABC):
    """Base class of the updating schemes."""

    kind: ClassVar[str]

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """JSON form, inverse of ``schedule_from_dict``."""

    def describe(self) -> str:
        return self.kind


@dataclass(frozen=True)
class Parallel(Schedule):
    kind: ClassVar[str] = "parallel"

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Sequential(Schedule):
    """``order`` defaults to the model's own order."""

    order: Optional[Tuple[int, ...]] = None
    kind: ClassVar[str] = "sequential"

    def __post_init__(self):
        if self.order is not None:
            object.__setattr__(self, 'order', tuple(int(j) for j in self.order))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind}
        if self.order is not None:
            data["order"] = list(self.order)
        return data


@dataclass(frozen=True)
class Randomized(Schedule):
    seed: int
    kind: ClassVar[str] = "randomized"

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ParameterError("seed must be a non-negative integer", {"seed": self.seed})
        object.__setattr__(self, 'seed', int(self.seed))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "seed": self.seed}

    def describe(self) -> str:
        return f"{self.kind}(seed={self.seed})"


@dataclass(frozen=True)
class Lazy(Schedule):
    """Damped update q_j <- q_j^(1-alpha) (full update)^alpha over a parallel or sequential base."""

    base: Schedule
    alpha: float
    kind: ClassVar[str] = "lazy"

    def __post_init__(self):
        if not isinstance(self.base, (Parallel, Sequential)):
            raise ParameterError("lazy base must be parallel or sequential", {"base": type(self.base).__name__})
        alpha = float(self.alpha)
        if not 0.0 < alpha <= 1.0:
            raise ParameterError("alpha must lie in (0, 1]", {"alpha": alpha})
        object.__setattr__(self, 'alpha', alpha)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "alpha": self.alpha, "base": self.base.to_dict()}

    def describe(self) -> str:
        return f"{self.kind}({self.base.describe()}, alpha={self.alpha:g})"


def schedule_from_dict(data: Dict[str, Any]) -> Schedule:
    """
    Build a schedule from ``{"kind": ..., ...}``.

    Raises:
        ConfigError: unknown kind or missing fields, naming the offending field
    """
    if not isinstance(data, dict):
        raise ConfigError("must be an object", "schedule")
    kind = data.get("kind")
    try:
        if kind == Parallel.kind:
            return Parallel()
        if kind == Sequential.kind:
            return Sequential(data.get("order"))
        if kind == Randomized.kind:
            if data.get("seed") is None:
                raise ConfigError("randomized schedule requires a seed", "schedule.seed")
            return Randomized(data["seed"])
        if kind == Lazy.kind:
            if "alpha" not in data:
                raise ConfigError("lazy schedule requires alpha", "schedule.alpha")
            return Lazy(schedule_from_dict(data.get("base", {"kind": "parallel"})), data["alpha"])
    except ParameterError as e:
        raise ConfigError(e.message, "schedule") from e
    raise ConfigError(f"unknown schedule kind {kind!r}", "schedule.kind")


def resolve_order(model: TargetModel, order: Optional[Sequence[int]]) -> Tuple[int, ...]:
    """The sweep order for ``model``; raises ParameterError unless it is a permutation."""
    if order is None:
        return model.default_order()
    order = tuple(int(j) for j in order)
    if sorted(order) != list(range(model.block_count)):
        raise ParameterError(
            "order must be a permutation of the block indices",
            {"order": list(order), "blocks": model.block_count}
        )
    return order


def _advance(
    model: TargetModel,
    state: MeanFieldState,
    schedule: Schedule,
    rng: Optional[np.random.Generator],
) -> Tuple[MeanFieldState, Tuple[int, ...]]:
    alpha = 1.0
    if isinstance(schedule, Lazy):
        alpha, schedule = schedule.alpha, schedule.base

    if isinstance(schedule, Parallel):
        blocks = tuple(
            geometric_mix(state[j], model.update(state, j), alpha) for j in range(model.block_count)
        )
        return MeanFieldState(blocks), tuple(range(model.block_count))

    if isinstance(schedule, Sequential):
        order = resolve_order(model, schedule.order)
        for j in order:
            state = state.replace(j, geometric_mix(state[j], model.update(state, j), alpha))
        return state, order

    if isinstance(schedule, Randomized):
        if rng is None:
            raise ParameterError("randomized steps need a random generator")
        j = int(rng.integers(model.block_count))
        return state.replace(j, model.update(state, j)), (j,)

    raise ParameterError("unknown schedule", {"type": type(schedule).__name__})


def step(
    model: TargetModel,
    state: MeanFieldState,
    schedule: Schedule,
    rng: Optional[np.random.Generator] = None,
) -> MeanFieldState:
    """
    One iteration of ``schedule``.

    Randomized schedules draw their block from ``rng``, which the caller keeps across
    steps, for example ``np.random.default_rng(schedule.seed)``. Other schedules ignore it.

    Raises:
        FamilyMismatchError, DimensionMismatchError: state outside the model's families
        ParameterError: invalid order, or a randomized schedule without ``rng``
    """
    model.check_state(state)
    return _advance(model, state, schedule, rng)[0]


def _diagnose(
    model: TargetModel,
    state: MeanFieldState,
    qstar: MeanFieldState,
    iteration: int,
    previous_total: Optional[float],
    updated: Tuple[int, ...],
) -> DiagnosticRow:
    block_divergences = tuple(
        kl_weighted(state[j], qstar[j], 0.5) for j in range(model.block_count)
    )
    total = sum(block_divergences)
    ratio = None
    if previous_total is not None and previous_total > Config.RATIO_FLOOR:
        ratio = total / previous_total
    return DiagnosticRow(
        iteration=iteration,
        block_divergences=block_divergences,
        total=total,
        ratio=ratio,
        objective_gap=model.objective_gap(state, qstar),
        updated_blocks=updated,
    )


def _is_divergent(total: float) -> bool:
    return not math.isfinite(total) or total > Config.DIVERGENCE_THRESHOLD


def run(
    model: TargetModel,
    schedule: Schedule,
    init: MeanFieldState,
    qstar: MeanFieldState,
    max_iter: int = Config.MAX_ITER,
    stop_tol: float = Config.STOP_TOL,
    stagnation_window: Optional[int] = None,
) -> Trajectory:
    """
    Iterate ``schedule`` from ``init`` until the total D_{KL,1/2} to ``qstar`` is at most
    ``stop_tol`` or ``max_iter`` iterations have run.

    A total above the divergence threshold, a non-finite total or a numerical failure of
    an update ends the run with the ``DIVERGED`` outcome. With ``stagnation_window`` set,
    a total whose relative change stays below ``Config.STAGNATION_RTOL`` for that many
    consecutive iterations ends the run with ``STAGNATED``.

    Raises:
        FamilyMismatchError, DimensionMismatchError: init or qstar outside the model's families
        ParameterError: invalid budget, tolerance, window or order
    """
    if max_iter < 0:
        raise ParameterError("max_iter must be non-negative", {"max_iter": max_iter})
    if not stop_tol >= 0.0:
        raise ParameterError("stop_tol must be non-negative", {"stop_tol": stop_tol})
    if stagnation_window is not None and stagnation_window < 1:
        raise ParameterError("stagnation_window must be positive", {"stagnation_window": stagnation_window})
    model.check_state(init)
    model.check_state(qstar)
    base = schedule.base if isinstance(schedule, Lazy) else schedule
    if isinstance(base, Sequential):
        resolve_order(model, base.order)

    rng = np.random.default_rng(schedule.seed) if isinstance(schedule, Randomized) else None
    trajectory = Trajectory(schedule=schedule.describe(), stop_tol=stop_tol)
    state = init
    with np.errstate(over='ignore', invalid='ignore'):
        row = _diagnose(model, state, qstar, 0, None, ())
    trajectory.states.append(state)
    trajectory.rows.append(row)

    if row.total <= stop_tol:
        trajectory.outcome = RunOutcome.CONVERGED
        return trajectory

    flat_iterations = 0
    for iteration in range(1, max_iter + 1):
        previous = row.total
        try:
            with np.errstate(over='ignore', invalid='ignore'):
                state, updated = _advance(model, state, schedule, rng)
                row = _diagnose(model, state, qstar, iteration, previous, updated)
        except (CaviLabError, ArithmeticError, np.linalg.LinAlgError) as e:
            logger.warning("Iteration %d failed numerically (%s); treating the run as diverged", iteration, e)
            trajectory.outcome = RunOutcome.DIVERGED
            break
        trajectory.states.append(state)
        trajectory.rows.append(row)

        if _is_divergent(row.total):
            trajectory.outcome = RunOutcome.DIVERGED
            break
        if row.total <= stop_tol:
            trajectory.outcome = RunOutcome.CONVERGED
            break
        if stagnation_window is not None:
            change = abs(row.total - previous)
            flat_iterations = flat_iterations + 1 if change <= Config.STAGNATION_RTOL * previous else 0
            if flat_iterations >= stagnation_window:
                trajectory.outcome = RunOutcome.STAGNATED
                break

    logger.debug(
        "%s run of %s: %s after %d iterations, D=%.3e",
        schedule.describe(), model.family.value, trajectory.outcome.value,
        len(trajectory) - 1, trajectory.terminal_divergence,
        extra={"extra_data": {
            "outcome": trajectory.outcome.value,
            "iterations": len(trajectory) - 1,
            "terminal_divergence": trajectory.terminal_divergence,
        }}
    )
    return trajectory


@dataclass(frozen=True)
class EnsembleResult:
    """
    Per-iteration statistics of randomized runs over a seed list.

    Attributes:
        seeds: the seeds, in order
        totals: (seeds x (T+1)) total divergences, padded after early stops
        mean_d: mean total divergence at each iteration
        mean_ratio: mean of the per-seed ratios at each iteration (nan at t = 0)
        ratio_se: standard error of ``mean_ratio`` (nan with fewer than two ratios)
        update_counts: how often each block was chosen across all seeds and steps
    """

    seeds: Tuple[int, ...]
    totals: np.ndarray
    mean_d: np.ndarray
    mean_ratio: np.ndarray
    ratio_se: np.ndarray
    update_counts: np.ndarray

    @property
    def update_frequencies(self) -> np.ndarray:
        return self.update_counts / max(int(self.update_counts.sum()), 1)


def _padded_totals(trajectory: Trajectory, length: int) -> np.ndarray:
    totals = trajectory.totals
    fill = 0.0 if trajectory.converged else totals[-1]
    return np.concatenate([totals, np.full(length - totals.size, fill)])


def run_randomized_ensemble(
    model: TargetModel,
    seeds: Sequence[int],
    init: MeanFieldState,
    qstar: MeanFieldState,
    T: int,
    threads: Optional[int] = None,
) -> EnsembleResult:
    """
    Run ``T`` randomized steps for every seed and average the total divergence.

    Runs execute on a thread pool and are merged in seed order, so the result depends only
    on the seed list. Ratios are taken per seed where the previous total exceeds the
    ratio floor.

    Raises:
        ParameterError: empty seed list or negative T
    """
    seeds = tuple(int(seed) for seed in seeds)
    if not seeds:
        raise ParameterError("the seed list is empty")
    if T < 0:
        raise ParameterError("T must be non-negative", {"T": T})
    model.check_state(init)
    model.check_state(qstar)

    def single(seed: int) -> Trajectory:
        return run(model, Randomized(seed), init, qstar, max_iter=T, stop_tol=0.0)

    workers = min(threads or Config.threads(), len(seeds))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        trajectories: List[Trajectory] = list(pool.map(single, seeds))

    totals = np.vstack([_padded_totals(t, T + 1) for t in trajectories])
    previous = totals[:, :-1]
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(previous > Config.RATIO_FLOOR, totals[:, 1:] / previous, np.nan)
    counts = np.sum(~np.isnan(ratios), axis=0)
    with np.errstate(invalid='ignore', divide='ignore'):
        mean_ratio = np.where(counts > 0, np.nansum(ratios, axis=0) / np.maximum(counts, 1), np.nan)
        centered = np.where(np.isnan(ratios), 0.0, ratios - mean_ratio)
        variance = np.sum(centered ** 2, axis=0) / np.maximum(counts - 1, 1)
        ratio_se = np.where(counts > 1, np.sqrt(variance / np.maximum(counts, 1)), np.nan)

    update_counts = np.zeros(model.block_count, dtype=np.int64)
    for trajectory in trajectories:
        for row in trajectory.rows[1:]:
            for j in row.updated_blocks:
                update_counts[j] += 1

    logger.info("Randomized ensemble of %d seeds over %d steps", len(seeds), T)
    return EnsembleResult(
        seeds=seeds,
        totals=totals,
        mean_d=totals.mean(axis=0),
        mean_ratio=np.concatenate([[np.nan], mean_ratio]),
        ratio_se=np.concatenate([[np.nan], ratio_se]),
        update_counts=update_counts,
    )


__all__ = [
    'Schedule',
    'Parallel',
    'Sequential',
    'Randomized',
    'Lazy',
    'schedule_from_dict',
    'resolve_order',
    'step',
    'run',
    'run_randomized_ensemble',
    'EnsembleResult',
    'DiagnosticRow',
    'RunOutcome',
    'Trajectory',
]
