"""
Contraction report: analytic constants next to the measured behaviour of one run.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Optional


class Verdict(Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ContractionReport:
    """
    Attributes:
        gcorr_bound: analytic generalized-correlation bound, None when unavailable
        kappa: contraction constant derived from the bound
        spectral_radius: spectral radius of the exact mean-update map, Gaussian targets only
        empirical_max_ratio: largest per-iteration ratio of total D_{KL,1/2}
        empirical_tail_ratio: geometric mean of the last quartile of ratios
        verdict: converged, diverged or inconclusive
        terminal_divergence: total D_{KL,1/2} of the last iterate
        iterations: iterations run
        stop_tol: stopping tolerance of the run
        schedule: description of the schedule
        metadata: free-form notes (for example the alpha grid of an empirical search)
    """

    gcorr_bound: Optional[float]
    kappa: Optional[float]
    spectral_radius: Optional[float]
    empirical_max_ratio: float
    empirical_tail_ratio: float
    verdict: Verdict
    terminal_divergence: float
    iterations: int
    stop_tol: float
    schedule: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.verdict is Verdict.CONVERGED

    def to_dict(self) -> Dict[str, Any]:
        """JSON form; fields without a value are left out."""
        data = asdict(self)
        data["verdict"] = self.verdict.value
        return {key: value for key, value in data.items() if value is not None}


__all__ = ['Verdict', 'ContractionReport']
