"""
Closed-form KL geometry on exponential-family block densities.

- ``kl(p, q)``: D_KL(p || q) for two densities of the same family
- ``kl_weighted(p, q, alpha)``: alpha KL(p||q) + (1 - alpha) KL(q||p); alpha = 1/2 is the
  symmetrized divergence used in every contraction statement of this package
- ``mean(p)``: first moment
- ``tv_distance(p, q)``: total variation between two-point densities
- ``geometric_mix(p, q, alpha)``: normalized p^(1-alpha) q^alpha inside the family

Usage:
    from CaviLab.core.divergences import Gamma, kl, kl_weighted

    kl(Gamma(2, 1), Gamma(2, 2))            # 2 (1 - log 2)
    kl_weighted(Gamma(2, 1), Gamma(2, 2), 0.5)  # 0.5
"""

import math
from typing import Callable, Dict, Union

import numpy as np
import scipy.linalg
from scipy.special import digamma, gammaln, log_ndtr

from CaviLab.core.divergences.densities import (
    LOGIT_BOUND,
    DENSITY_TYPES,
    BlockDensity,
    Family,
    Gamma,
    MVNormal,
    ProductTruncNormal,
    ProductTwoPoint,
    Side,
    TruncNormal,
    TwoPoint,
    UniNormal,
    check_compatible,
    clamp_logits,
    density_from_dict,
)
from CaviLab.core.divergences.special import (
    SQRT_2_OVER_PI,
    expit_difference,
    hazard,
    lambert_w0,
    two_point_kl_terms,
)
from CaviLab.core.exceptions import FamilyMismatchError, ParameterError


def _x_minus_log1p(x: float) -> float:
    # r - 1 - log(r) with r = 1 + x
    return x - math.log1p(x)


def _kl_uni_normal(p: UniNormal, q: UniNormal) -> float:
    ratio_minus_one = (q.precision - p.precision) / p.precision
    return 0.5 * _x_minus_log1p(ratio_minus_one) + 0.5 * q.precision * (q.mean - p.mean) ** 2


def _kl_mv_normal(p: MVNormal, q: MVNormal) -> float:
    # tr(Pq Pp^-1) = ||Lp^-1 Lq||_F^2 ; log det via triangular diagonals
    solved = scipy.linalg.solve_triangular(p.chol, q.chol, lower=True)
    trace_term = float(np.sum(solved * solved))
    logdet_ratio = 2.0 * float(np.sum(np.log(np.diag(q.chol))) - np.sum(np.log(np.diag(p.chol))))
    shift = q.chol.T @ (q.mean - p.mean)
    quad = float(shift @ shift)
    return max(0.5 * (trace_term - logdet_ratio - p.dim + quad), 0.0)


def _kl_gamma(p: Gamma, q: Gamma) -> float:
    if p.shape == q.shape:
        return p.shape * _x_minus_log1p((q.rate - p.rate) / p.rate)
    value = (
        (p.shape - q.shape) * digamma(p.shape)
        - gammaln(p.shape) + gammaln(q.shape)
        + q.shape * (math.log(p.rate) - math.log(q.rate))
        + p.shape * (q.rate - p.rate) / p.rate
    )
    return max(float(value), 0.0)


def _kl_two_point(p: TwoPoint, q: TwoPoint) -> float:
    return float(two_point_kl_terms(np.array([p.logit]), np.array([q.logit]))[0])


def trunc_normal_means(locations: np.ndarray, sides: np.ndarray) -> np.ndarray:
    """E X for unit-variance normals truncated to the given sides: a + s H(-s a)."""
    locations = np.asarray(locations, dtype=float)
    sides = np.asarray(sides, dtype=float)
    return locations + sides * hazard(-sides * locations)


def _trunc_normal_kl_terms(a0: np.ndarray, a1: np.ndarray, sides: np.ndarray) -> np.ndarray:
    # (a0 - a1)(E0 X - (a0 + a1)/2) - log(Z0 / Z1), Z = Phi(s a)
    sides = np.asarray(sides, dtype=float)
    mean0 = trunc_normal_means(a0, sides)
    terms = (a0 - a1) * (mean0 - 0.5 * (a0 + a1)) - (log_ndtr(sides * a0) - log_ndtr(sides * a1))
    return np.maximum(terms, 0.0)


def _kl_trunc_normal(p: TruncNormal, q: TruncNormal) -> float:
    terms = _trunc_normal_kl_terms(
        np.array([p.location]), np.array([q.location]), np.array([p.side.value])
    )
    return float(terms[0])


def _kl_product_trunc_normal(p: ProductTruncNormal, q: ProductTruncNormal) -> float:
    return float(np.sum(_trunc_normal_kl_terms(p.locations, q.locations, p.sides)))


def _kl_product_two_point(p: ProductTwoPoint, q: ProductTwoPoint) -> float:
    return float(np.sum(two_point_kl_terms(p.logits, q.logits)))


_KL_DISPATCH: Dict[Family, Callable[[BlockDensity, BlockDensity], float]] = {
    Family.UNI_NORMAL: _kl_uni_normal,
    Family.MV_NORMAL: _kl_mv_normal,
    Family.GAMMA: _kl_gamma,
    Family.TWO_POINT: _kl_two_point,
    Family.TRUNC_NORMAL: _kl_trunc_normal,
    Family.PRODUCT_TRUNC_NORMAL: _kl_product_trunc_normal,
    Family.PRODUCT_TWO_POINT: _kl_product_two_point,
}


def kl(p: BlockDensity, q: BlockDensity) -> float:
    """
    Closed-form D_KL(p || q).

    Args:
        p: First density
        q: Second density, same family, dimension and sides as ``p``

    Returns:
        Non-negative divergence; product families sum their components

    Raises:
        FamilyMismatchError: families or truncation sides differ
        DimensionMismatchError: dimensions differ
    """
    check_compatible(p, q)
    return _KL_DISPATCH[p.family](p, q)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError("alpha must lie in [0, 1]", {"alpha": alpha})
    return alpha


def kl_weighted(p: BlockDensity, q: BlockDensity, alpha: float) -> float:
    """
    Weighted divergence alpha KL(p||q) + (1 - alpha) KL(q||p).

    Raises:
        ParameterError: alpha outside [0, 1]
        FamilyMismatchError, DimensionMismatchError: as ``kl``
    """
    alpha = _check_alpha(alpha)
    check_compatible(p, q)
    compute = _KL_DISPATCH[p.family]
    return alpha * compute(p, q) + (1.0 - alpha) * compute(q, p)


def mean(p: BlockDensity) -> Union[float, np.ndarray]:
    """
    Exact first moment.

    Scalar families return a float; multivariate and product families return arrays.
    Two-point densities return the probability of the second category.
    """
    if isinstance(p, UniNormal):
        return p.mean
    if isinstance(p, MVNormal):
        return p.mean.copy()
    if isinstance(p, Gamma):
        return p.shape / p.rate
    if isinstance(p, TwoPoint):
        return p.prob_second
    if isinstance(p, TruncNormal):
        return float(trunc_normal_means(np.array([p.location]), np.array([p.side.value]))[0])
    if isinstance(p, ProductTruncNormal):
        return trunc_normal_means(p.locations, p.sides)
    if isinstance(p, ProductTwoPoint):
        return p.probs
    raise FamilyMismatchError("unknown density type", {"type": type(p).__name__})


def tv_distance(p: TwoPoint, q: TwoPoint) -> float:
    """Total variation |P(second) - Q(second)| between two-point densities."""
    if not isinstance(p, TwoPoint) or not isinstance(q, TwoPoint):
        raise FamilyMismatchError(
            "total variation is defined for two-point densities",
            {"p": type(p).__name__, "q": type(q).__name__}
        )
    return abs(expit_difference(p.logit, q.logit))


def geometric_mix(p: BlockDensity, q: BlockDensity, alpha: float) -> BlockDensity:
    """
    Normalized geometric mixture p^(1-alpha) q^alpha.

    alpha = 0 returns ``p`` and alpha = 1 returns ``q`` unchanged.
    """
    alpha = _check_alpha(alpha)
    check_compatible(p, q)
    if alpha == 1.0:
        return q
    if alpha == 0.0:
        return p
    return p.mix(q, alpha)


def densities_close(p: BlockDensity, q: BlockDensity, atol: float = 1e-12) -> bool:
    """Parameter equality within ``atol``; densities of different structure are never close."""
    if p.family is not q.family or p.dim != q.dim or p.structure() != q.structure():
        return False
    return all(
        np.allclose(a, b, rtol=0.0, atol=atol)
        for a, b in zip(p.parameters(), q.parameters())
    )


__all__ = [
    'LOGIT_BOUND',
    'SQRT_2_OVER_PI',
    'DENSITY_TYPES',
    'Family',
    'Side',
    'BlockDensity',
    'UniNormal',
    'MVNormal',
    'Gamma',
    'TwoPoint',
    'TruncNormal',
    'ProductTruncNormal',
    'ProductTwoPoint',
    'check_compatible',
    'clamp_logits',
    'density_from_dict',
    'densities_close',
    'expit_difference',
    'geometric_mix',
    'hazard',
    'kl',
    'kl_weighted',
    'lambert_w0',
    'mean',
    'trunc_normal_means',
    'tv_distance',
]
