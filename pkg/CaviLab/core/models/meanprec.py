"""
Normal observations with unknown mean and precision under independent priors
mu ~ N(0, 1/kappa), tau ~ Gamma(a0, b0).
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, ClassVar, Dict, Tuple

import numpy as np

from CaviLab.core.divergences import BlockDensity, Family, Gamma, UniNormal
from CaviLab.core.models.base import (
    MeanFieldState,
    ModelFamily,
    TargetModel,
    jitter_normal,
    readonly,
    register_model,
    require,
)


@register_model
@dataclass(frozen=True, eq=False)
class GaussMeanPrec(TargetModel):
    """
    Block 0 is q(mu) = N(m, 1/s); block 1 is q(tau) = Gamma(n/2 + a0, b).

    Updates:
        s <- n E(tau) + kappa,  m <- n E(tau) xbar / s
        b <- b0 + (ss + n (xbar - m)^2 + n / s) / 2
    where ss is the centered sum of squares.
    """

    x: np.ndarray
    kappa: float = 1.0
    a0: float = 1.0
    b0: float = 1.0

    family: ClassVar[ModelFamily] = ModelFamily.GAUSS_MEAN_PREC

    def __post_init__(self):
        x = readonly(self.x, 'x', 1)
        require(x.size >= 1, "x must be non-empty")
        object.__setattr__(self, 'x', x)
        for name in ('kappa', 'a0', 'b0'):
            value = float(getattr(self, name))
            require(math.isfinite(value) and value > 0.0, f"{name} must be positive", **{name: value})
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return int(self.x.size)

    @cached_property
    def xbar(self) -> float:
        return float(np.mean(self.x))

    @cached_property
    def centered_ss(self) -> float:
        return float(np.sum((self.x - self.xbar) ** 2))

    @property
    def precision_shape(self) -> float:
        return 0.5 * self.n + self.a0

    @property
    def block_count(self) -> int:
        return 2

    def block_families(self) -> Tuple[Family, ...]:
        return (Family.UNI_NORMAL, Family.GAMMA)

    def block_dims(self) -> Tuple[int, ...]:
        return (1, 1)

    def expected_square_error(self, location: UniNormal) -> float:
        """E_q (xbar - mu)^2 = (m - xbar)^2 + 1/s."""
        return (location.mean - self.xbar) ** 2 + 1.0 / location.precision

    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        if j == 0:
            weight = self.n * state[1].shape / state[1].rate
            precision = weight + self.kappa
            return UniNormal(weight * self.xbar / precision, precision)
        rate = self.b0 + 0.5 * (self.centered_ss + self.n * self.expected_square_error(state[0]))
        return Gamma(self.precision_shape, rate)

    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        error_shift = self.expected_square_error(state[0]) - self.expected_square_error(qstar[0])
        precision_shift = state[1].shape / state[1].rate - qstar[1].shape / qstar[1].rate
        return -0.5 * self.n * error_shift * precision_shift

    def default_start(self) -> MeanFieldState:
        shape = self.precision_shape
        rate = self.b0 + 0.5 * self.centered_ss
        return MeanFieldState((
            UniNormal(self.xbar, self.n * shape / rate + self.kappa),
            Gamma(shape, rate),
        ))

    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        if j == 0:
            return jitter_normal(center, rng, scale, move_precision=True)
        spread = scale / math.sqrt(center.shape)
        return Gamma(center.shape, center.rate * math.exp(spread * rng.standard_normal()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "x": self.x.tolist(),
            "kappa": self.kappa,
            "a0": self.a0,
            "b0": self.b0,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GaussMeanPrec':
        return cls(
            np.asarray(data["x"], dtype=float),
            data.get("kappa", 1.0),
            data.get("a0", 1.0),
            data.get("b0", 1.0),
        )


__all__ = ['GaussMeanPrec']
