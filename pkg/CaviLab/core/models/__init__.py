"""
Target models and the operations every scheduler and analysis routine builds on.

Usage:
    from CaviLab.core.models import GaussianBlocks, fixed_point, objective_gap

    model = GaussianBlocks([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], (1, 1))
    qstar = fixed_point(model)
"""

from typing import Any, Dict, Optional, Sequence, Union

from CaviLab.config import Config
from CaviLab.core.divergences import BlockDensity, geometric_mix, kl_weighted
from CaviLab.core.exceptions import (
    ConvergenceError,
    ParameterError,
    UnsupportedModelError,
)
from CaviLab.core.logging import get_logger
from CaviLab.core.logging.utils import timed
from CaviLab.core.models.base import (
    MODEL_TYPES,
    MeanFieldState,
    ModelFamily,
    TargetModel,
    perturb_density,
    stacked_means,
)
from CaviLab.core.models.data import generate_data, orthogonal_design
from CaviLab.core.models.discrete import DOBRUSHIN_LIMIT, Discrete2d
from CaviLab.core.models.gaussian import (
    GOLDEN_RATIO,
    CompoundSymmetry,
    GaussConditionals,
    GaussianBlocks,
)
from CaviLab.core.models.latent import GMM2, Probit
from CaviLab.core.models.meanprec import GaussMeanPrec

logger = get_logger(__name__)

# Extra sweeps allowed after the tolerance is met, kept while the residual still drops
POLISH_SWEEPS = 50


def validate_state(model: TargetModel, state: MeanFieldState) -> None:
    """
    Raise unless every block of ``state`` belongs to the model's declared family.

    Raises:
        DimensionMismatchError, FamilyMismatchError, BlockIndexError
    """
    model.check_state(state)


def block_update(model: TargetModel, state: MeanFieldState, j: int) -> BlockDensity:
    """
    Exact CAVI update of block ``j`` with every other block held fixed.

    Raises:
        BlockIndexError: j out of range
        FamilyMismatchError: state blocks outside the model's families
    """
    model.check_index(j)
    model.check_state(state)
    return model.update(state, j)


def stationarity_residual(model: TargetModel, state: MeanFieldState) -> float:
    """max_j D_{KL,1/2}(update_j(state) || state_j); zero exactly at a fixed point."""
    return max(
        kl_weighted(model.update(state, j), state[j], 0.5) for j in range(model.block_count)
    )


def _sweep(model: TargetModel, state: MeanFieldState, damping: float) -> MeanFieldState:
    for j in model.default_order():
        new_block = model.update(state, j)
        if damping != 1.0:
            new_block = geometric_mix(state[j], new_block, damping)
        state = state.replace(j, new_block)
    return state


@timed("fixed point")
def fixed_point(
    model: TargetModel,
    tol: float = Config.FIXED_POINT_TOL,
    max_iter: int = Config.FIXED_POINT_MAX_ITER,
    damping: float = 1.0,
    start: Optional[MeanFieldState] = None,
) -> MeanFieldState:
    """
    Mean-field optimum q* of ``model``.

    Closed forms are returned directly. Otherwise sequential sweeps in the model's default
    order run from ``start`` (default: the model's documented start) until the
    stationarity residual is at most ``tol``; a few more sweeps follow while the residual
    keeps dropping.

    Args:
        model: target model
        tol: stationarity tolerance in symmetrized KL
        max_iter: sweep budget
        damping: step size in (0, 1] of the geometric mixture toward each update
        start: optional starting state

    Raises:
        ConvergenceError: residual still above ``tol`` after ``max_iter`` sweeps
        ParameterError: invalid tolerance, budget or damping
    """
    if not tol > 0.0:
        raise ParameterError("tol must be positive", {"tol": tol})
    if max_iter < 1:
        raise ParameterError("max_iter must be at least 1", {"max_iter": max_iter})
    if not 0.0 < damping <= 1.0:
        raise ParameterError("damping must lie in (0, 1]", {"damping": damping})

    closed_form = model.closed_form_fixed_point()
    if closed_form is not None:
        return closed_form

    state = model.default_start() if start is None else start
    model.check_state(state)
    residual = float('inf')
    for iteration in range(1, max_iter + 1):
        state = _sweep(model, state, damping)
        residual = stationarity_residual(model, state)
        if residual <= tol:
            break
    else:
        raise ConvergenceError(
            f"{model.family.value} fixed point not reached", residual, max_iter
        )

    for _ in range(POLISH_SWEEPS):
        candidate = _sweep(model, state, damping)
        candidate_residual = stationarity_residual(model, candidate)
        if not candidate_residual < residual:
            break
        state, residual = candidate, candidate_residual

    logger.debug(
        "%s fixed point after %d sweeps, residual %.3e", model.family.value, iteration, residual
    )
    return state


def delta_block(model: TargetModel, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
    """Interaction term of block ``j`` against the rest of the blocks."""
    model.check_index(j)
    model.check_state(state)
    model.check_state(qstar)
    return model.interaction(state, qstar, j)


def delta_n(model: TargetModel, state: MeanFieldState, qstar: MeanFieldState) -> float:
    """
    Interaction integral of (q1 - q1*)(q2 - q2*) against log pi_n for a two-block model.

    Raises:
        UnsupportedModelError: more than two blocks (use ``delta_block``)
        FamilyMismatchError: states outside the model's families
    """
    if model.block_count != 2:
        raise UnsupportedModelError(
            "delta_n is defined for two blocks; use delta_block",
            {"family": model.family.value, "blocks": model.block_count}
        )
    return delta_block(model, state, qstar, 0)


def objective_gap(model: TargetModel, state: MeanFieldState, qstar: MeanFieldState) -> float:
    """F(q) - F(q*) without normalizing constants."""
    model.check_state(state)
    model.check_state(qstar)
    return model.objective_gap(state, qstar)


def initial_state(
    model: TargetModel,
    qstar: MeanFieldState,
    scale: Union[float, Sequence[float]] = Config.INIT_SCALE,
) -> MeanFieldState:
    """
    q* with each block shifted by ``scale`` posterior standard deviations.

    ``scale`` may be one number for all blocks or one per block.
    """
    model.check_state(qstar)
    if isinstance(scale, (int, float)):
        scales = [float(scale)] * model.block_count
    else:
        scales = [float(s) for s in scale]
        if len(scales) != model.block_count:
            raise ParameterError(
                "one perturbation scale per block is required",
                {"blocks": model.block_count, "scales": len(scales)}
            )
    return MeanFieldState(tuple(
        model.perturb_block(j, qstar[j], scales[j]) for j in range(model.block_count)
    ))


def model_to_dict(model: TargetModel) -> Dict[str, Any]:
    return model.to_dict()


def model_from_dict(data: Dict[str, Any]) -> TargetModel:
    """
    Rebuild a model from its JSON form.

    Raises:
        ParameterError: unknown family, missing or invalid parameters
    """
    if not isinstance(data, dict):
        raise ParameterError("a model must be a JSON object", {"type": type(data).__name__})
    try:
        family = ModelFamily(data.get("family"))
    except ValueError as e:
        raise ParameterError("unknown or missing model family", {"family": data.get("family")}) from e
    try:
        return MODEL_TYPES[family].from_dict(data)
    except KeyError as e:
        raise ParameterError(f"missing model parameter {e}", {"family": family.value}) from e
    except (TypeError, ValueError) as e:
        raise ParameterError("invalid model parameters", {"family": family.value, "reason": str(e)}) from e


__all__ = [
    'DOBRUSHIN_LIMIT',
    'GOLDEN_RATIO',
    'MODEL_TYPES',
    'ModelFamily',
    'MeanFieldState',
    'TargetModel',
    'Discrete2d',
    'GaussianBlocks',
    'CompoundSymmetry',
    'GaussConditionals',
    'Probit',
    'GMM2',
    'GaussMeanPrec',
    'block_update',
    'delta_block',
    'delta_n',
    'fixed_point',
    'generate_data',
    'initial_state',
    'model_from_dict',
    'model_to_dict',
    'objective_gap',
    'orthogonal_design',
    'perturb_density',
    'stacked_means',
    'stationarity_residual',
    'validate_state',
]
