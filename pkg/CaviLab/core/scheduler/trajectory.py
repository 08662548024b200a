"""
Trajectory records produced by the scheduler.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from CaviLab.core.models import MeanFieldState


class RunOutcome(Enum):
    """Why a run stopped."""
    CONVERGED = "converged"
    DIVERGED = "diverged"
    MAX_ITER = "max_iter"
    STAGNATED = "stagnated"


@dataclass(frozen=True)
class DiagnosticRow:
    """
    Diagnostics of one iterate against q*.

    Attributes:
        iteration: 0 for the initial state
        block_divergences: D_{KL,1/2}(q_j || q*_j) for every block
        total: sum of the block divergences
        ratio: total over the previous total; None at iteration 0 or when the previous
            total is below the ratio floor
        objective_gap: F(q) - F(q*)
        updated_blocks: blocks touched by the step that produced this iterate
    """

    iteration: int
    block_divergences: Tuple[float, ...]
    total: float
    ratio: Optional[float]
    objective_gap: float
    updated_blocks: Tuple[int, ...] = ()


@dataclass
class Trajectory:
    """Iterates of one run with their diagnostics; ``states[t]`` matches ``rows[t]``."""

    schedule: str
    stop_tol: float
    states: List[MeanFieldState] = field(default_factory=list)
    rows: List[DiagnosticRow] = field(default_factory=list)
    outcome: RunOutcome = RunOutcome.MAX_ITER

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def block_count(self) -> int:
        return len(self.rows[0].block_divergences) if self.rows else 0

    @property
    def totals(self) -> np.ndarray:
        return np.array([row.total for row in self.rows])

    @property
    def ratios(self) -> List[float]:
        """Defined per-iteration ratios, in order."""
        return [row.ratio for row in self.rows if row.ratio is not None]

    def block_series(self, j: int) -> np.ndarray:
        return np.array([row.block_divergences[j] for row in self.rows])

    @property
    def terminal_divergence(self) -> float:
        return self.rows[-1].total

    @property
    def final_state(self) -> MeanFieldState:
        return self.states[-1]

    @property
    def converged(self) -> bool:
        return self.outcome is RunOutcome.CONVERGED

    @property
    def diverged(self) -> bool:
        return self.outcome is RunOutcome.DIVERGED


__all__ = ['RunOutcome', 'DiagnosticRow', 'Trajectory']
