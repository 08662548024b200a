"""
Two-node Ising target on {0,1}^2 with p.m.f. (1-p)/2 on agreeing cells and p/2 on the others.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, ClassVar, Dict, Optional, Tuple

import numpy as np
from scipy.special import logit

from CaviLab.core.divergences import BlockDensity, Family, TwoPoint, expit_difference
from CaviLab.core.logging import get_logger
from CaviLab.core.models.base import (
    MeanFieldState,
    ModelFamily,
    TargetModel,
    register_model,
    require,
)

logger = get_logger(__name__)

DOBRUSHIN_LIMIT = 2.0


@register_model
@dataclass(frozen=True, eq=False)
class Discrete2d(TargetModel):
    """
    Both marginals are Bernoulli(1/2), so q* puts logit 0 on each block.

    The block update is logit(q_j) <- -logit(p) tanh(logit(q_k) / 2).
    """

    p: float

    family: ClassVar[ModelFamily] = ModelFamily.DISCRETE_2D

    def __post_init__(self):
        p = float(self.p)
        require(0.0 < p < 1.0, "p must lie in (0, 1)", p=p)
        object.__setattr__(self, 'p', p)

    @cached_property
    def log_odds(self) -> float:
        """logit(p), the coupling strength."""
        return float(logit(self.p))

    @property
    def in_dobrushin_regime(self) -> bool:
        return abs(self.log_odds) < DOBRUSHIN_LIMIT

    @property
    def block_count(self) -> int:
        return 2

    def block_families(self) -> Tuple[Family, ...]:
        return (Family.TWO_POINT, Family.TWO_POINT)

    def block_dims(self) -> Tuple[int, ...]:
        return (1, 1)

    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        return TwoPoint(-self.log_odds * math.tanh(0.5 * state[1 - j].logit))

    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        # 2 (q1(0) - q1*(0)) (q2(0) - q2*(0)) log((1-p)/p)
        shift_0 = expit_difference(state[0].logit, qstar[0].logit)
        shift_1 = expit_difference(state[1].logit, qstar[1].logit)
        return -2.0 * shift_0 * shift_1 * self.log_odds

    def closed_form_fixed_point(self) -> Optional[MeanFieldState]:
        if not self.in_dobrushin_regime:
            logger.warning(
                "p=%.6g lies outside |logit p| < 2; the uniform fixed point is not globally attracting",
                self.p
            )
        return self.default_start()

    def default_start(self) -> MeanFieldState:
        return MeanFieldState((TwoPoint(0.0), TwoPoint(0.0)))

    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        return TwoPoint(center.logit + scale * rng.standard_normal())

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "p": self.p}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Discrete2d':
        return cls(data["p"])


__all__ = ['DOBRUSHIN_LIMIT', 'Discrete2d']
