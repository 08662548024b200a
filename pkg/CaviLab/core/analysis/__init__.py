"""
Contraction analysis: analytic generalized-correlation bounds, contraction constants,
spectral radii of the Gaussian mean dynamics and verdicts on measured trajectories.

Usage:
    from CaviLab.core.analysis import gcorr_bound, kappa, verify_contraction

    bound = gcorr_bound(model)
    report = verify_contraction(trajectory, kappa(bound, model.block_count))
"""

import math
from dataclasses import replace
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from CaviLab.config import Config
from CaviLab.core.analysis.empirical import GCorrSearch, gcorr_empirical, gcorr_empirical_detail
from CaviLab.core.analysis.report import ContractionReport, Verdict
from CaviLab.core.divergences import lambert_w0
from CaviLab.core.exceptions import (
    DegenerateTrajectoryError,
    ParameterError,
    UnsupportedModelError,
)
from CaviLab.core.logging import get_logger
from CaviLab.core.models import (
    CompoundSymmetry,
    Discrete2d,
    GaussConditionals,
    GaussianBlocks,
    GaussMeanPrec,
    GMM2,
    MeanFieldState,
    Probit,
    TargetModel,
    fixed_point,
    stacked_means,
)
from CaviLab.core.scheduler import Lazy, Parallel, Randomized, Schedule, Sequential, Trajectory

logger = get_logger(__name__)


def _largest_eigenvalue(gram: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric PSD matrix; power iteration above the size threshold."""
    if gram.shape[0] <= Config.POWER_ITERATION_THRESHOLD:
        return float(scipy.linalg.eigvalsh(gram)[-1])
    vector = np.ones(gram.shape[0]) / math.sqrt(gram.shape[0])
    value = 0.0
    for _ in range(10_000):
        image = gram @ vector
        norm = float(np.linalg.norm(image))
        if norm == 0.0:
            return 0.0
        vector = image / norm
        if abs(norm - value) <= 1e-14 * norm:
            return norm
        value = norm
    return value


def _whitened_coupling(model: GaussianBlocks, j: int) -> np.ndarray:
    """L_j^-1 [Q_jk L_k^-T]_{k != j} with Q_kk = L_k L_k'."""
    factors = [scipy.linalg.cholesky(model.sub(k, k), lower=True) for k in range(model.block_count)]
    pieces = []
    for k in range(model.block_count):
        if k == j:
            continue
        right = scipy.linalg.solve_triangular(factors[k], model.sub(j, k).T, lower=True).T
        pieces.append(scipy.linalg.solve_triangular(factors[j], right, lower=True))
    return np.hstack(pieces)


def coupling_norm(model: GaussianBlocks, j: int = 0) -> float:
    """||Q_jj^{-1/2} [Q_jk Q_kk^{-1/2}]_{k != j}||_2; for two blocks this is ||B||_2."""
    coupling = _whitened_coupling(model, j)
    gram = coupling @ coupling.T if coupling.shape[0] <= coupling.shape[1] else coupling.T @ coupling
    return math.sqrt(max(_largest_eigenvalue(gram), 0.0))


def meanprec_radius(omega: float, n: int) -> float:
    """Neighborhood radius r0 = W0(omega^2 n) / 2 for the mean-precision target."""
    if not omega > 0.0 or n < 1:
        raise ParameterError("omega must be positive and n at least 1", {"omega": omega, "n": n})
    return 0.5 * lambert_w0(omega * omega * n)


def _meanprec_bound(model: GaussMeanPrec, qstar: MeanFieldState, omega: float) -> float:
    # Worst case of |Delta| / sqrt(D_1/2(q_mu) D_1/2(q_tau)) over KL(q* || q) <= r0
    r0 = meanprec_radius(omega, model.n)
    location, precision = qstar[0], qstar[1]
    s_star, m_star = location.precision, location.mean
    a, b_star = precision.shape, precision.rate
    s_min = s_star * math.exp(-(1.0 + 2.0 * r0))
    b_min = b_star * math.exp(-(1.0 + r0 / a))
    mean_shift = math.sqrt(2.0 * r0 / s_min)
    spread = 2.0 * abs(model.xbar - m_star) + mean_shift
    location_factor = spread / math.sqrt(s_min + s_star) + 1.0 / math.sqrt(s_min * s_star)
    return model.n * math.sqrt(2.0 * a) / math.sqrt(b_min * b_star) * location_factor


def gcorr_bound(
    model: TargetModel,
    qstar: Optional[MeanFieldState] = None,
    omega: float = Config.MEANPREC_OMEGA,
) -> Optional[float]:
    """
    Analytic upper bound on the generalized correlation.

    - Discrete2d: |logit p|
    - GaussianBlocks: 2 ||B||_2 (max over blocks of the block-vs-rest norm for d > 2)
    - GaussConditionals: 4 / (1 + sqrt 5)
    - Probit: 2 sqrt(lambda_max((X'X + kappa I)^-1/2 X'X (X'X + kappa I)^-1/2))
    - CompoundSymmetry: 2 |rho| sqrt(d - 1)
    - GaussMeanPrec: local bound on the radius ``meanprec_radius(omega, n)`` around q*
      (computed when ``qstar`` is omitted)
    - GMM2: None, only the two-stage product is available

    Raises:
        ParameterError: factorization failure
    """
    if isinstance(model, Discrete2d):
        return abs(model.log_odds)
    if isinstance(model, CompoundSymmetry):
        return 2.0 * abs(model.rho) * math.sqrt(model.d - 1)
    if isinstance(model, GaussianBlocks):
        return 2.0 * max(coupling_norm(model, j) for j in range(model.block_count))
    if isinstance(model, GaussConditionals):
        return 4.0 / (1.0 + math.sqrt(5.0))
    if isinstance(model, Probit):
        try:
            largest = scipy.linalg.eigh(model.gram, model.precision, eigvals_only=True)[-1]
        except np.linalg.LinAlgError as e:
            raise ParameterError("X'X + kappa I could not be factorized", {"reason": str(e)}) from e
        return 2.0 * math.sqrt(max(float(largest), 0.0))
    if isinstance(model, GaussMeanPrec):
        return _meanprec_bound(model, qstar if qstar is not None else fixed_point(model), omega)
    if isinstance(model, GMM2):
        return None
    raise UnsupportedModelError("no analytic bound for this model", {"family": model.family.value})


def kappa(gcorr: float, d: int = 2) -> float:
    """Contraction constant gcorr^2/4 for two blocks and (d-1) gcorr^2/4 for d blocks."""
    if not gcorr >= 0.0:
        raise ParameterError("gcorr must be non-negative", {"gcorr": gcorr})
    if d < 2:
        raise ParameterError("d must be at least 2", {"d": d})
    return (d - 1) * gcorr * gcorr / 4.0


def onesided_kappa(gamma: float) -> Optional[float]:
    """Rate gamma / (2 - gamma) of the one-sided KL statement; None unless 0 <= gamma < 1."""
    if 0.0 <= gamma < 1.0:
        return gamma / (2.0 - gamma)
    return None


def schedule_rate_bound(kappa_value: float, schedule: Schedule) -> Optional[float]:
    """
    Certified rate of a schedule given the parallel constant.

    Parallel: kappa per iteration; sequential: kappa^2 per sweep; randomized: (1 + kappa)/2
    per step in expectation; lazy schedules carry no certified rate.
    """
    if isinstance(schedule, Parallel):
        return kappa_value
    if isinstance(schedule, Sequential):
        return kappa_value * kappa_value
    if isinstance(schedule, Randomized):
        return 0.5 * (1.0 + kappa_value)
    if isinstance(schedule, Lazy):
        return None
    raise ParameterError("unknown schedule", {"type": type(schedule).__name__})


def _jacobi_radius(model: GaussianBlocks) -> float:
    # Block-Jacobi map -D^-1 (Q - D) is similar to I - L^-1 Q L^-T with L block-diagonal
    blocks = [scipy.linalg.cholesky(model.sub(j, j), lower=True) for j in range(model.block_count)]
    factor = scipy.linalg.block_diag(*blocks)
    whitened = scipy.linalg.solve_triangular(factor, model.Q, lower=True)
    whitened = scipy.linalg.solve_triangular(factor, whitened.T, lower=True).T
    iteration = np.eye(model.Q.shape[0]) - 0.5 * (whitened + whitened.T)
    return float(np.max(np.abs(scipy.linalg.eigvalsh(iteration))))


def spectral_radius_mean_dynamics(model: TargetModel) -> float:
    """
    Spectral radius of the exact CAVI mean map.

    Two-block Gaussians report ||B||^2, the radius of m_1 -> Q11^-1 Q12 Q22^-1 Q21 m_1.
    Compound symmetry and Gaussians with more blocks report the radius of the parallel
    (block-Jacobi) map, which is |rho|(d - 1) for compound symmetry.

    Raises:
        UnsupportedModelError: model is not Gaussian with fixed block precisions
    """
    if isinstance(model, CompoundSymmetry):
        return _jacobi_radius(model.gaussian)
    if isinstance(model, GaussianBlocks):
        if model.block_count == 2:
            return coupling_norm(model, 0) ** 2
        return _jacobi_radius(model)
    raise UnsupportedModelError(
        "spectral radius is defined for Gaussian targets", {"family": model.family.value}
    )


def rho_hat_diagnostic(fisher: Sequence[Sequence[float]]) -> float:
    """
    Correlation |I12| / sqrt(I11 I22) of a 2 x 2 observed-information matrix.

    Raises:
        ParameterError: not a symmetric positive-definite 2 x 2 matrix
    """
    matrix = np.asarray(fisher, dtype=float)
    if matrix.shape != (2, 2) or not np.all(np.isfinite(matrix)):
        raise ParameterError("fisher must be a finite 2 x 2 matrix", {"shape": matrix.shape})
    if not np.isclose(matrix[0, 1], matrix[1, 0], rtol=1e-12, atol=1e-12):
        raise ParameterError("fisher must be symmetric")
    try:
        scipy.linalg.cholesky(matrix, lower=True)
    except np.linalg.LinAlgError as e:
        raise ParameterError("fisher must be positive-definite", {"reason": str(e)}) from e
    return abs(float(matrix[0, 1])) / math.sqrt(float(matrix[0, 0] * matrix[1, 1]))


def tail_ratio(ratios: Sequence[float]) -> float:
    """Geometric mean of the last quartile of ``ratios`` (at least one value)."""
    if not ratios:
        return 0.0
    tail = np.asarray(ratios[-max(1, len(ratios) // 4):], dtype=float)
    if np.any(tail <= 0.0):
        return 0.0
    return float(np.exp(np.mean(np.log(tail))))


def verify_contraction(
    trajectory: Trajectory,
    kappa_value: Optional[float],
    gcorr: Optional[float] = None,
    spectral_radius: Optional[float] = None,
    tolerance: float = Config.VERIFY_TOLERANCE,
) -> ContractionReport:
    """
    Compare a trajectory with a contraction constant.

    The verdict is ``diverged`` when the run diverged, ``converged`` when the terminal
    divergence is at most the run's stop_tol and, for kappa < 1, every ratio is at most
    kappa + tolerance, and ``inconclusive`` otherwise.

    Raises:
        DegenerateTrajectoryError: no rows, or a run that neither reached its tolerance nor
            produced a single ratio
        ParameterError: negative kappa
    """
    if not trajectory.rows:
        raise DegenerateTrajectoryError("trajectory has no diagnostic rows")
    if kappa_value is not None and not kappa_value >= 0.0:
        raise ParameterError("kappa must be non-negative", {"kappa": kappa_value})
    ratios = trajectory.ratios
    terminal = trajectory.terminal_divergence
    reached = terminal <= trajectory.stop_tol
    if not ratios and not reached and not trajectory.diverged:
        raise DegenerateTrajectoryError(
            "trajectory has no ratios above the floor",
            {"rows": len(trajectory.rows), "terminal": terminal}
        )

    if trajectory.diverged:
        verdict = Verdict.DIVERGED
    elif reached and (
        kappa_value is None or kappa_value >= 1.0 or all(r <= kappa_value + tolerance for r in ratios)
    ):
        verdict = Verdict.CONVERGED
    else:
        verdict = Verdict.INCONCLUSIVE

    finite = [r for r in ratios if math.isfinite(r)]
    return ContractionReport(
        gcorr_bound=gcorr,
        kappa=kappa_value,
        spectral_radius=spectral_radius,
        empirical_max_ratio=max(finite) if finite else 0.0,
        empirical_tail_ratio=tail_ratio(finite),
        verdict=verdict,
        terminal_divergence=terminal,
        iterations=len(trajectory.rows) - 1,
        stop_tol=trajectory.stop_tol,
        schedule=trajectory.schedule,
    )


def contraction_report(
    model: TargetModel,
    trajectory: Trajectory,
    qstar: Optional[MeanFieldState] = None,
    schedule: Optional[Schedule] = None,
) -> ContractionReport:
    """
    ``verify_contraction`` with the model's own bound, kappa and spectral radius filled in.

    Per-iteration ratios are checked against kappa for parallel runs only; sequential,
    randomized and lazy iterations carry no per-iteration certificate, so for them the
    verdict rests on the terminal divergence. The schedule's certified rate goes to the
    report metadata.
    """
    schedule = schedule or Parallel()
    bound = gcorr_bound(model, qstar)
    kappa_value = kappa(bound, model.block_count) if bound is not None else None
    try:
        radius = spectral_radius_mean_dynamics(model)
    except UnsupportedModelError:
        radius = None
    checked = kappa_value if isinstance(schedule, Parallel) else None
    report = verify_contraction(trajectory, checked, bound, radius)
    metadata = {"ratio_check": checked is not None}
    if kappa_value is not None:
        metadata["schedule_rate_bound"] = schedule_rate_bound(kappa_value, schedule)
    return replace(report, kappa=kappa_value, metadata=metadata)


def two_stage_rates(
    trajectory: Trajectory, first: int = 1, second: int = 0, start: int = 2
) -> Tuple[float, float]:
    """
    Measured (kappa_1, kappa_2) of a sequential trajectory updating ``first`` then ``second``.

    kappa_1 = max_t D_first(t) / D_second(t-1) and kappa_2 = max_t D_second(t) / D_first(t),
    over iterations t >= ``start`` with denominators above the ratio floor.

    Raises:
        DegenerateTrajectoryError: no usable iteration
    """
    first_series = trajectory.block_series(first)
    second_series = trajectory.block_series(second)
    kappa_1, kappa_2 = [], []
    for t in range(max(start, 1), len(trajectory.rows)):
        if second_series[t - 1] > Config.RATIO_FLOOR:
            kappa_1.append(first_series[t] / second_series[t - 1])
        if first_series[t] > Config.RATIO_FLOOR:
            kappa_2.append(second_series[t] / first_series[t])
    if not kappa_1 or not kappa_2:
        raise DegenerateTrajectoryError("no iterations above the ratio floor", {"start": start})
    return float(max(kappa_1)), float(max(kappa_2))


def mean_error_ratios(trajectory: Trajectory, qstar: MeanFieldState) -> np.ndarray:
    """Per-step ratios of ||stacked block means - q* means||, where the previous error is non-zero."""
    target = stacked_means(qstar)
    errors = np.array([np.linalg.norm(stacked_means(state) - target) for state in trajectory.states])
    previous, current = errors[:-1], errors[1:]
    keep = previous > 0.0
    return current[keep] / previous[keep]


__all__ = [
    'ContractionReport',
    'GCorrSearch',
    'Verdict',
    'contraction_report',
    'coupling_norm',
    'gcorr_bound',
    'gcorr_empirical',
    'gcorr_empirical_detail',
    'kappa',
    'mean_error_ratios',
    'meanprec_radius',
    'onesided_kappa',
    'rho_hat_diagnostic',
    'schedule_rate_bound',
    'spectral_radius_mean_dynamics',
    'tail_ratio',
    'two_stage_rates',
    'verify_contraction',
]
