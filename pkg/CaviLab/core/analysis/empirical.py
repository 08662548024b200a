"""
Random search for the generalized correlation of a target inside a KL neighborhood of q*.

For every sampled state q the search records, per block j and weight alpha,

    g_j(alpha) = |Delta_j(q)| / sqrt(D_alpha(q_j || q*_j) D_{1-alpha}(q_{-j} || q*_{-j}))

where Delta_j is the interaction of block j against the rest. The reported value is
max_j min_alpha max(G_j(alpha), G_j(1 - alpha)) with G_j the maximum over samples. Since
the supremum is only sampled the value is a lower proxy of the true quantity, and the
alpha infimum runs over a finite grid.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from CaviLab.config import Config
from CaviLab.core.divergences import kl
from CaviLab.core.exceptions import EmptyNeighborhoodError, ParameterError
from CaviLab.core.logging import get_logger
from CaviLab.core.logging.utils import LogTimer
from CaviLab.core.models import MeanFieldState, TargetModel

logger = get_logger(__name__)

# Log10 range of the spread used when sampling around q*
SCALE_RANGE = (-4.0, 1.0)
# Share of the budget spent on random sampling; the rest refines the best sample
RANDOM_SHARE = 0.7


@dataclass(frozen=True)
class GCorrSearch:
    """
    Attributes:
        value: max_j min over the grid of max(G_j(alpha), G_j(1 - alpha))
        block_values: the inner min-max for each block
        alphas: the grid the weights were evaluated on (closed under alpha -> 1 - alpha)
        sup_by_alpha: (blocks x alphas) sampled suprema G_j(alpha)
        accepted: samples inside the neighborhood
        evaluated: samples drawn
        best_state: the sample with the largest symmetric ratio
    """

    value: float
    block_values: Tuple[float, ...]
    alphas: Tuple[float, ...]
    sup_by_alpha: np.ndarray
    accepted: int
    evaluated: int
    best_state: Optional[MeanFieldState]


def _symmetric_grid(alphas: Sequence[float]) -> np.ndarray:
    values = [float(a) for a in alphas]
    if not values:
        raise ParameterError("the alpha grid is empty")
    for a in values:
        if not 0.0 <= a <= 1.0:
            raise ParameterError("alphas must lie in [0, 1]", {"alpha": a})
    return np.array(sorted(set(values) | {1.0 - a for a in values}))


def _ratios(
    model: TargetModel, state: MeanFieldState, qstar: MeanFieldState, grid: np.ndarray
) -> Optional[np.ndarray]:
    """(blocks x alphas) ratios for one state, None when some block sits exactly at q*."""
    forward = np.array([kl(state[j], qstar[j]) for j in range(model.block_count)])
    backward = np.array([kl(qstar[j], state[j]) for j in range(model.block_count)])
    if np.any(forward + backward <= 0.0):
        return None
    ratios = np.empty((model.block_count, grid.size))
    for j in range(model.block_count):
        interaction = abs(model.interaction(state, qstar, j))
        own = grid * forward[j] + (1.0 - grid) * backward[j]
        rest_forward = forward.sum() - forward[j]
        rest_backward = backward.sum() - backward[j]
        rest = (1.0 - grid) * rest_forward + grid * rest_backward
        with np.errstate(divide='ignore', invalid='ignore'):
            ratios[j] = np.where(own * rest > 0.0, interaction / np.sqrt(own * rest), 0.0)
    return ratios


def _inside(state: MeanFieldState, qstar: MeanFieldState, r0: Optional[float]) -> bool:
    if r0 is None:
        return True
    return all(kl(qstar[j], state[j]) <= r0 for j in range(len(qstar)))


def gcorr_empirical_detail(
    model: TargetModel,
    qstar: MeanFieldState,
    r0: Optional[float] = None,
    alphas: Sequence[float] = Config.GCORR_ALPHAS,
    budget: int = Config.GCORR_BUDGET,
    seed: int = 0,
) -> GCorrSearch:
    """
    Search the neighborhood {q_j : KL(q*_j || q_j) <= r0} for large interaction ratios.

    ``r0=None`` searches the whole restricted family. Samples come from
    ``model.sample_block`` around q* with log-uniform spread; the last part of the budget
    perturbs the best sample so far with a shrinking step.

    Raises:
        EmptyNeighborhoodError: zero budget or no sample inside the neighborhood
        ParameterError: invalid alpha grid or radius
    """
    if budget < 1:
        raise EmptyNeighborhoodError("sample budget is zero", {"budget": budget})
    if r0 is not None and not r0 > 0.0:
        raise ParameterError("r0 must be positive", {"r0": r0})
    model.check_state(qstar)
    grid = _symmetric_grid(alphas)
    mirror = np.array([int(np.argmin(np.abs(grid - (1.0 - a)))) for a in grid])
    half = int(np.argmin(np.abs(grid - 0.5)))
    rng = np.random.default_rng(seed)

    sup = np.zeros((model.block_count, grid.size))
    accepted = 0
    best_state: Optional[MeanFieldState] = None
    best_score = -math.inf
    best_scale = 1.0

    def consider(state: MeanFieldState, scale: float) -> bool:
        nonlocal accepted, best_state, best_score, best_scale
        if not _inside(state, qstar, r0):
            return False
        ratios = _ratios(model, state, qstar, grid)
        if ratios is None:
            return False
        accepted += 1
        np.maximum(sup, ratios, out=sup)
        score = float(np.max(ratios[:, half]))
        if score > best_score:
            best_state, best_score, best_scale = state, score, scale
            return True
        return False

    random_budget = max(1, int(round(RANDOM_SHARE * budget)))
    with LogTimer("GCorr search", logger):
        for _ in range(random_budget):
            scale = 10.0 ** rng.uniform(*SCALE_RANGE)
            state = MeanFieldState(tuple(
                model.sample_block(j, qstar[j], rng, scale) for j in range(model.block_count)
            ))
            consider(state, scale)

        step_scale = best_scale
        for _ in range(budget - random_budget):
            if best_state is None:
                break
            center = best_state
            state = MeanFieldState(tuple(
                model.sample_block(j, center[j], rng, step_scale) for j in range(model.block_count)
            ))
            if consider(state, step_scale):
                step_scale *= 1.5
            else:
                step_scale = max(0.7 * step_scale, 10.0 ** SCALE_RANGE[0])

    if accepted == 0:
        raise EmptyNeighborhoodError(
            "no sampled density fell inside the neighborhood", {"r0": r0, "budget": budget}
        )

    block_values = tuple(
        float(np.min(np.maximum(sup[j], sup[j][mirror]))) for j in range(model.block_count)
    )
    value = max(block_values)
    logger.info(
        "Empirical GCorr of %s: %.6g from %d/%d samples", model.family.value, value, accepted, budget
    )
    return GCorrSearch(
        value=value,
        block_values=block_values,
        alphas=tuple(float(a) for a in grid),
        sup_by_alpha=sup,
        accepted=accepted,
        evaluated=budget,
        best_state=best_state,
    )


def gcorr_empirical(
    model: TargetModel,
    qstar: MeanFieldState,
    r0: Optional[float] = None,
    alphas: Sequence[float] = Config.GCORR_ALPHAS,
    budget: int = Config.GCORR_BUDGET,
    seed: int = 0,
) -> float:
    """Sampled generalized correlation; see ``gcorr_empirical_detail``."""
    return gcorr_empirical_detail(model, qstar, r0, alphas, budget, seed).value


__all__ = ['GCorrSearch', 'gcorr_empirical', 'gcorr_empirical_detail']
