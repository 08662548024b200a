"""
Brute-force references for the closed forms: adaptive quadrature on transformed domains,
exhaustive summation for the discrete target and root bracketing for special functions.

Nothing here shares code with the closed forms it checks. Quadrature runs on
``scipy.integrate.quad`` after a tanh substitution x = c + s atanh(u) that maps the real
line onto (-1, 1); the endpoints are clipped at |u| = 1 - 1e-12. Gamma integrals run the
same substitution on log x.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.optimize
from scipy.special import gammaln, log_ndtr, polygamma

from CaviLab.core.divergences import (
    BlockDensity,
    Gamma,
    MVNormal,
    ProductTruncNormal,
    ProductTwoPoint,
    Side,
    TruncNormal,
    TwoPoint,
    UniNormal,
    kl,
    kl_weighted,
    trunc_normal_means,
)
from CaviLab.core.exceptions import ParameterError, QuadratureError, UnsupportedModelError
from CaviLab.core.logging import get_logger
from CaviLab.core.logging.utils import LogTimer
from CaviLab.core.models import (
    Discrete2d,
    GaussConditionals,
    GaussianBlocks,
    MeanFieldState,
    TargetModel,
    delta_n,
)

logger = get_logger(__name__)

_U_EDGE = 1.0 - 1e-12
_EPS_REL = 1e-10
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Transform(Enum):
    TANH_INFINITE = "tanh_infinite"
    TANH_HALF_LINE = "tanh_half_line"
    FINITE_INTERVAL = "finite_interval"


@dataclass(frozen=True)
class QuadratureSpec:
    """
    Attributes:
        abs_tol: absolute tolerance handed to the integrator
        transform: substitution applied before integrating
        max_subdivisions: subinterval budget of the adaptive rule
        center: c of the substitution (in log x for the half line)
        spread: s of the substitution (in log x for the half line)
        lower: lower end of the domain; finite for ``FINITE_INTERVAL``
        upper: upper end of the domain; finite for ``FINITE_INTERVAL``
    """

    abs_tol: float = 1e-10
    transform: Transform = Transform.TANH_INFINITE
    max_subdivisions: int = 500
    center: float = 0.0
    spread: float = 1.0
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.abs_tol > 0.0:
            raise ParameterError("abs_tol must be positive", {"abs_tol": self.abs_tol})
        if self.max_subdivisions < 1:
            raise ParameterError("max_subdivisions must be positive", {"max_subdivisions": self.max_subdivisions})
        if not (self.spread > 0.0 and math.isfinite(self.spread) and math.isfinite(self.center)):
            raise ParameterError("center and spread must be finite, spread positive",
                                 {"center": self.center, "spread": self.spread})
        if not self.lower < self.upper:
            raise ParameterError("empty domain", {"lower": self.lower, "upper": self.upper})
        if self.transform is Transform.FINITE_INTERVAL and not (
            math.isfinite(self.lower) and math.isfinite(self.upper)
        ):
            raise ParameterError("a finite interval needs finite ends", {"lower": self.lower, "upper": self.upper})

    def around(self, center: float, spread: float, **changes: Any) -> 'QuadratureSpec':
        return replace(self, center=float(center), spread=float(spread), **changes)


def _u_bounds(spec: QuadratureSpec) -> Tuple[float, float]:
    if spec.transform is Transform.FINITE_INTERVAL:
        return spec.lower, spec.upper
    if spec.transform is Transform.TANH_HALF_LINE:
        return -_U_EDGE, _U_EDGE
    lo = -_U_EDGE if spec.lower == -math.inf else math.tanh((spec.lower - spec.center) / spec.spread)
    hi = _U_EDGE if spec.upper == math.inf else math.tanh((spec.upper - spec.center) / spec.spread)
    return max(lo, -_U_EDGE), min(hi, _U_EDGE)


def integrate(fn: Callable[[float], float], spec: QuadratureSpec) -> float:
    """
    Integral of ``fn`` over the domain of ``spec``.

    Raises:
        QuadratureError: subdivision budget exhausted, or the error estimate misses the
            tolerance by orders of magnitude
    """
    if spec.transform is Transform.FINITE_INTERVAL:
        integrand = fn
    elif spec.transform is Transform.TANH_INFINITE:
        def integrand(u: float) -> float:
            value = fn(spec.center + spec.spread * math.atanh(u))
            return value * spec.spread / ((1.0 - u) * (1.0 + u)) if value else 0.0
    else:
        def integrand(u: float) -> float:
            x = math.exp(spec.center + spec.spread * math.atanh(u))
            value = fn(x)
            return value * x * spec.spread / ((1.0 - u) * (1.0 + u)) if value else 0.0

    lo, hi = _u_bounds(spec)
    result = scipy.integrate.quad(
        integrand, lo, hi,
        epsabs=spec.abs_tol, epsrel=_EPS_REL, limit=spec.max_subdivisions, full_output=1
    )
    value, error, info = result[0], result[1], result[2]
    if len(result) > 3:
        target = spec.abs_tol + _EPS_REL * abs(value)
        if info.get("last", 0) >= spec.max_subdivisions:
            raise QuadratureError(
                "subdivision budget exhausted",
                {"subdivisions": spec.max_subdivisions, "error": error, "value": value}
            )
        if error > 1e3 * target:
            raise QuadratureError("tolerance not met", {"error": error, "value": value, "reason": result[3]})
        logger.debug("quad flagged a %.3e error estimate: %s", error, result[3])
    return float(value)


def log_density(block: BlockDensity) -> Callable[[float], float]:
    """Normalized log density of a scalar continuous block, written out directly."""
    if isinstance(block, UniNormal):
        mean, precision = block.mean, block.precision
        half_log_precision = 0.5 * math.log(precision)
        return lambda x: half_log_precision - _LOG_SQRT_2PI - 0.5 * precision * (x - mean) ** 2
    if isinstance(block, Gamma):
        shape, rate = block.shape, block.rate
        constant = shape * math.log(rate) - float(gammaln(shape))
        return lambda x: constant + (shape - 1.0) * math.log(x) - rate * x if x > 0.0 else -math.inf
    if isinstance(block, TruncNormal):
        location, sign = block.location, float(block.side.value)
        log_mass = float(log_ndtr(sign * location))

        def log_trunc(x: float) -> float:
            if sign * x <= 0.0:
                return -math.inf
            return -_LOG_SQRT_2PI - 0.5 * (x - location) ** 2 - log_mass
        return log_trunc
    raise UnsupportedModelError("no scalar density for this family", {"family": block.family.value})


def default_spec(block: BlockDensity, base: Optional[QuadratureSpec] = None) -> QuadratureSpec:
    """Substitution centered on where ``block`` puts its mass."""
    base = base or QuadratureSpec()
    if isinstance(block, UniNormal):
        return base.around(block.mean, block.sd, transform=Transform.TANH_INFINITE)
    if isinstance(block, Gamma):
        # left tail of log X decays like exp(shape * y)
        spread = max(math.sqrt(float(polygamma(1, block.shape))), 3.0 / block.shape)
        return base.around(
            math.log(block.shape / block.rate), spread, transform=Transform.TANH_HALF_LINE
        )
    if isinstance(block, TruncNormal):
        sign = float(block.side.value)
        cut = -sign * block.location
        tail = float(trunc_normal_means(np.array([block.location]), np.array([sign]))[0])
        hazard_value = sign * (tail - block.location)
        variance = max(1.0 + cut * hazard_value - hazard_value * hazard_value, 1e-12)
        bounds = {"lower": 0.0, "upper": math.inf} if sign > 0 else {"lower": -math.inf, "upper": 0.0}
        return base.around(tail, 3.0 * math.sqrt(variance), transform=Transform.TANH_INFINITE, **bounds)
    raise UnsupportedModelError("no quadrature domain for this family", {"family": block.family.value})


def quad_kl(
    log_p: Callable[[float], float], log_q: Callable[[float], float], spec: QuadratureSpec
) -> float:
    """Integral of p log(p / q) from the two log densities."""
    def integrand(x: float) -> float:
        lp = log_p(x)
        if lp == -math.inf:
            return 0.0
        return math.exp(lp) * (lp - log_q(x))

    return integrate(integrand, spec)


def _two_point_probs(block: TwoPoint) -> Tuple[float, float]:
    return block.prob_first, block.prob_second


def _sum_kl(p: Tuple[float, ...], q: Tuple[float, ...]) -> float:
    return sum(a * math.log(a / b) for a, b in zip(p, q) if a > 0.0)


def _mv_normal_kl(p: MVNormal, q: MVNormal) -> float:
    # eigenvalue form: 1/2 [tr(Lq Sp) - d + dm' Lq dm + log det Lp - log det Lq]
    eig_p, vec_p = scipy.linalg.eigh(p.precision)
    eig_q = scipy.linalg.eigvalsh(q.precision)
    covariance_p = (vec_p / eig_p) @ vec_p.T
    shift = p.mean - q.mean
    return 0.5 * (
        float(np.trace(q.precision @ covariance_p)) - p.dim + float(shift @ q.precision @ shift)
        + float(np.sum(np.log(eig_p)) - np.sum(np.log(eig_q)))
    )


def oracle_kl(p: BlockDensity, q: BlockDensity, spec: Optional[QuadratureSpec] = None) -> float:
    """KL(p || q) by quadrature, summation or eigendecomposition, depending on the family."""
    if isinstance(p, (UniNormal, Gamma, TruncNormal)):
        return quad_kl(log_density(p), log_density(q), default_spec(p, spec))
    if isinstance(p, TwoPoint):
        return _sum_kl(_two_point_probs(p), _two_point_probs(q))
    if isinstance(p, ProductTwoPoint):
        return sum(oracle_kl(p.component(i), q.component(i)) for i in range(p.dim))
    if isinstance(p, ProductTruncNormal):
        return sum(oracle_kl(p.component(i), q.component(i), spec) for i in range(p.dim))
    if isinstance(p, MVNormal):
        return _mv_normal_kl(p, q)
    raise UnsupportedModelError("no oracle for this family", {"family": p.family.value})


def oracle_kl_weighted(
    p: BlockDensity, q: BlockDensity, alpha: float, spec: Optional[QuadratureSpec] = None
) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError("alpha must lie in [0, 1]", {"alpha": alpha})
    return alpha * oracle_kl(p, q, spec) + (1.0 - alpha) * oracle_kl(q, p, spec)


def _log_target(model: TargetModel) -> Callable[[float, float], float]:
    if isinstance(model, GaussConditionals):
        return lambda x, y: -0.5 * (x * x + y * y + x * x * y * y)
    if isinstance(model, GaussianBlocks) and model.partition == (1, 1):
        theta0, precision, n_scale = model.theta0, model.Q, model.n_scale

        def log_gaussian(x: float, y: float) -> float:
            u, v = x - theta0[0], y - theta0[1]
            return -0.5 * n_scale * (
                precision[0, 0] * u * u + 2.0 * precision[0, 1] * u * v + precision[1, 1] * v * v
            )
        return log_gaussian
    raise UnsupportedModelError(
        "quadrature of the interaction needs a two-dimensional continuous target",
        {"family": model.family.value}
    )


def _signed_axis(
    block: UniNormal, star: UniNormal, base: QuadratureSpec
) -> Tuple[Callable[[float], float], QuadratureSpec]:
    log_q, log_star = log_density(block), log_density(star)
    spread = max(block.sd, star.sd) + 0.5 * abs(block.mean - star.mean)
    spec = base.around(0.5 * (block.mean + star.mean), spread, transform=Transform.TANH_INFINITE)
    return (lambda x: math.exp(log_q(x)) - math.exp(log_star(x))), spec


def quad_delta(
    model: TargetModel,
    state: MeanFieldState,
    qstar: MeanFieldState,
    spec: Optional[QuadratureSpec] = None,
) -> float:
    """
    Quadrature of (q1 - q1*)(x) (q2 - q2*)(y) log pi(x, y) with the unnormalized log
    density, for scalar two-block Gaussians and the Gaussian-conditionals target.

    Both log densities are quadratic in y, so log pi(x, y) = c0(x) + c1(x) y + c2(x) y^2
    with coefficients read off log pi(x, -1), log pi(x, 0) and log pi(x, 1). The inner
    integral is then c0 M0 + c1 M1 + c2 M2 with the moments Mk of (q2 - q2*) taken once,
    leaving a single outer quadrature over x.
    """
    log_target = _log_target(model)
    model.check_state(state)
    model.check_state(qstar)
    base = spec or QuadratureSpec()
    outer_weight, outer_spec = _signed_axis(state[0], qstar[0], base)
    inner_weight, inner_spec = _signed_axis(state[1], qstar[1], base)
    m0 = integrate(inner_weight, inner_spec)
    m1 = integrate(lambda y: y * inner_weight(y), inner_spec)
    m2 = integrate(lambda y: y * y * inner_weight(y), inner_spec)

    def outer(x: float) -> float:
        weight = outer_weight(x)
        if weight == 0.0:
            return 0.0
        below, at, above = log_target(x, -1.0), log_target(x, 0.0), log_target(x, 1.0)
        c1 = 0.5 * (above - below)
        c2 = 0.5 * (above + below) - at
        return weight * (at * m0 + c1 * m1 + c2 * m2)

    return integrate(outer, outer_spec)


class DiscreteSums(NamedTuple):
    """Exhaustive sums over the four cells: delta, (forward, backward) KL per block, TV per block."""
    delta: float
    kls: Tuple[Tuple[float, float], ...]
    tv: Tuple[float, ...]


def discrete_enumerate(model: Discrete2d, state: MeanFieldState, qstar: MeanFieldState) -> DiscreteSums:
    if not isinstance(model, Discrete2d):
        raise UnsupportedModelError("enumeration needs the discrete target", {"family": model.family.value})
    model.check_state(state)
    model.check_state(qstar)
    agree, disagree = math.log((1.0 - model.p) / 2.0), math.log(model.p / 2.0)
    log_pmf = ((agree, disagree), (disagree, agree))
    q = [_two_point_probs(block) for block in state]
    star = [_two_point_probs(block) for block in qstar]
    delta = sum(
        (q[0][x] - star[0][x]) * (q[1][y] - star[1][y]) * log_pmf[x][y]
        for x in (0, 1) for y in (0, 1)
    )
    kls = tuple((_sum_kl(q[j], star[j]), _sum_kl(star[j], q[j])) for j in (0, 1))
    tv = tuple(0.5 * sum(abs(a - b) for a, b in zip(q[j], star[j])) for j in (0, 1))
    return DiscreteSums(float(delta), kls, tv)


def bisect_lambert_w0(x: float) -> float:
    """w with w e^w = x on [0, log1p(x)], by bisection."""
    if not x >= 0.0:
        raise ParameterError("x must be non-negative", {"x": x})
    if x == 0.0:
        return 0.0
    upper = math.log1p(x)
    return float(scipy.optimize.bisect(
        lambda w: w * math.exp(w) - x, 0.0, upper, xtol=1e-300, rtol=1e-15, maxiter=2000
    ))


def quad_trunc_normal_mean(block: TruncNormal, spec: Optional[QuadratureSpec] = None) -> float:
    """E X of a truncated unit-variance normal by quadrature of x p(x)."""
    log_p = log_density(block)

    def integrand(x: float) -> float:
        lp = log_p(x)
        return x * math.exp(lp) if lp != -math.inf else 0.0

    return integrate(integrand, default_spec(block, spec))


def agrees(value: float, reference: float, rtol: float = 1e-6, atol: float = 1e-8) -> bool:
    return abs(value - reference) <= atol + rtol * abs(reference)


@dataclass
class OracleSummary:
    """Comparisons of a randomized corpus; ``mismatches`` lists the failures."""
    seed: int
    comparisons: Dict[str, int] = field(default_factory=dict)
    mismatches: List[Dict[str, Any]] = field(default_factory=list)
    max_error: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def record(self, name: str, value: float, reference: float, rtol: float, atol: float) -> None:
        self.comparisons[name] = self.comparisons.get(name, 0) + 1
        error = abs(value - reference) / max(abs(reference), atol)
        self.max_error[name] = max(self.max_error.get(name, 0.0), error)
        if not agrees(value, reference, rtol, atol):
            self.mismatches.append({"check": name, "closed_form": value, "oracle": reference})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "comparisons": dict(self.comparisons),
            "max_error": dict(self.max_error),
            "mismatches": list(self.mismatches),
        }


def random_block(family: str, rng: np.random.Generator, side: Side = Side.POSITIVE) -> BlockDensity:
    """One density of ``family`` with parameters in the ranges the corpus covers."""
    if family == "uni_normal":
        return UniNormal(rng.uniform(-3.0, 3.0), 10.0 ** rng.uniform(-1.0, 1.0))
    if family == "mv_normal":
        factor = rng.standard_normal((3, 3))
        return MVNormal(rng.uniform(-2.0, 2.0, 3), factor @ factor.T + 0.5 * np.eye(3))
    if family == "gamma":
        return Gamma(10.0 ** rng.uniform(0.0, 1.3), 10.0 ** rng.uniform(-1.0, 1.0))
    if family == "two_point":
        return TwoPoint(rng.uniform(-6.0, 6.0))
    if family == "trunc_normal":
        return TruncNormal(rng.uniform(-3.0, 3.0), side)
    raise ParameterError("unknown corpus family", {"family": family})


CORPUS_FAMILIES = ("uni_normal", "mv_normal", "gamma", "two_point", "trunc_normal")


def _random_delta_case(
    name: str, rng: np.random.Generator
) -> Tuple[TargetModel, MeanFieldState, MeanFieldState]:
    if name == "discrete2d":
        model = Discrete2d(rng.uniform(0.05, 0.95))
        return (model, MeanFieldState((TwoPoint(rng.uniform(-3, 3)), TwoPoint(rng.uniform(-3, 3)))),
                MeanFieldState((TwoPoint(rng.uniform(-3, 3)), TwoPoint(rng.uniform(-3, 3)))))
    if name == "gaussian_blocks":
        q11, q22 = rng.uniform(0.5, 2.0, 2)
        q12 = rng.uniform(-0.9, 0.9) * math.sqrt(q11 * q22)
        model = GaussianBlocks(rng.uniform(-1.0, 1.0, 2), [[q11, q12], [q12, q22]], (1, 1))
        qstar = model.closed_form_fixed_point()
        state = MeanFieldState(tuple(
            UniNormal(block.mean + rng.standard_normal(), 10.0 ** rng.uniform(-0.5, 0.5)) for block in qstar
        ))
        return model, state, qstar
    model = GaussConditionals()
    qstar = model.closed_form_fixed_point()
    state = MeanFieldState(tuple(
        UniNormal(0.5 * rng.standard_normal(), 10.0 ** rng.uniform(-0.3, 0.7)) for _ in range(2)
    ))
    return model, state, qstar


def check_corpus(
    seed: int = 0,
    pairs: int = 200,
    delta_pairs: int = 200,
    rtol: float = 1e-6,
    atol: float = 1e-8,
) -> OracleSummary:
    """
    Compare closed-form KL, weighted KL and interaction terms with the oracle on a seeded
    random corpus: ``pairs`` density pairs per family and discrete cases, ``delta_pairs``
    quadrature cases per continuous target.
    """
    rng = np.random.default_rng(seed)
    summary = OracleSummary(seed)
    with LogTimer("oracle corpus", logger):
        for family in CORPUS_FAMILIES:
            for _ in range(pairs):
                side = Side.POSITIVE if rng.random() < 0.5 else Side.NEGATIVE
                p, q = random_block(family, rng, side), random_block(family, rng, side)
                alpha = float(rng.uniform())
                summary.record(f"kl/{family}", kl(p, q), oracle_kl(p, q), rtol, atol)
                summary.record(
                    f"kl_weighted/{family}", kl_weighted(p, q, alpha),
                    oracle_kl_weighted(p, q, alpha), rtol, atol
                )
        for name, count in (("discrete2d", pairs), ("gaussian_blocks", delta_pairs),
                            ("gauss_conditionals", delta_pairs)):
            for _ in range(count):
                model, state, qstar = _random_delta_case(name, rng)
                if isinstance(model, Discrete2d):
                    reference = discrete_enumerate(model, state, qstar).delta
                else:
                    reference = quad_delta(model, state, qstar)
                summary.record(f"delta/{name}", delta_n(model, state, qstar), reference, rtol, atol)

    if summary.passed:
        logger.info("Oracle corpus (seed %d): %d checks agree", seed, sum(summary.comparisons.values()))
    else:
        logger.warning("Oracle corpus (seed %d): %d mismatches", seed, len(summary.mismatches))
    return summary


__all__ = [
    'CORPUS_FAMILIES',
    'DiscreteSums',
    'OracleSummary',
    'QuadratureSpec',
    'Transform',
    'agrees',
    'bisect_lambert_w0',
    'check_corpus',
    'default_spec',
    'discrete_enumerate',
    'integrate',
    'log_density',
    'oracle_kl',
    'oracle_kl_weighted',
    'quad_delta',
    'quad_kl',
    'quad_trunc_normal_mean',
    'random_block',
]
