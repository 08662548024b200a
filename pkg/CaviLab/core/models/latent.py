"""
Latent-variable targets: probit regression with data augmentation and the two-component
Gaussian mixture with one unknown location.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Any, ClassVar, Dict, Tuple

import numpy as np
import scipy.linalg

from CaviLab.core.divergences import (
    BlockDensity,
    Family,
    MVNormal,
    ProductTruncNormal,
    ProductTwoPoint,
    UniNormal,
    trunc_normal_means,
)
from CaviLab.core.exceptions import FamilyMismatchError
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
class Probit(TargetModel):
    """
    Probit regression y_i ~ Bernoulli(Phi(x_i' beta)), beta ~ N(0, I/kappa), augmented with
    z_i ~ N(x_i' beta, 1) truncated to the side given by y_i.

    Block 0 is q(beta) = N(m, (X'X + kappa I)^-1); the precision never changes.
    Block 1 is q(z), a product of unit-variance truncated normals at locations X m.
    """

    X: np.ndarray
    y: np.ndarray
    kappa: float = 1.0

    family: ClassVar[ModelFamily] = ModelFamily.PROBIT

    def __post_init__(self):
        X = readonly(self.X, 'X', 2)
        y = readonly(self.y, 'y', 1, dtype=np.int64)
        require(X.shape[0] >= 1 and X.shape[1] >= 1, "X must be non-empty", shape=X.shape)
        require(y.size == X.shape[0], "y must have one entry per row of X", n=X.shape[0], y=y.size)
        require(bool(np.all((y == 0) | (y == 1))), "y must be binary")
        kappa = float(self.kappa)
        require(np.isfinite(kappa) and kappa > 0.0, "kappa must be positive", kappa=kappa)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'kappa', kappa)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @cached_property
    def gram(self) -> np.ndarray:
        gram = self.X.T @ self.X
        gram.setflags(write=False)
        return gram

    @cached_property
    def precision(self) -> np.ndarray:
        """X'X + kappa I, shared by every beta-block iterate."""
        precision = self.gram + self.kappa * np.eye(self.p)
        precision.setflags(write=False)
        return precision

    @cached_property
    def _factor(self) -> Tuple[np.ndarray, bool]:
        return scipy.linalg.cho_factor(self.precision, lower=True)

    @cached_property
    def sides(self) -> np.ndarray:
        sides = (2 * self.y - 1).astype(np.int8)
        sides.setflags(write=False)
        return sides

    @property
    def block_count(self) -> int:
        return 2

    def block_families(self) -> Tuple[Family, ...]:
        return (Family.MV_NORMAL, Family.PRODUCT_TRUNC_NORMAL)

    def block_dims(self) -> Tuple[int, ...]:
        return (self.p, self.n)

    def check_block(self, j: int, block: BlockDensity) -> None:
        super().check_block(j, block)
        if j == 1 and not np.array_equal(block.sides, self.sides):
            raise FamilyMismatchError("latent truncation sides must follow y", {"block": 1})

    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        if j == 0:
            latent_means = trunc_normal_means(state[1].locations, self.sides)
            return MVNormal(scipy.linalg.cho_solve(self._factor, self.X.T @ latent_means), self.precision)
        return ProductTruncNormal(self.X @ state[0].mean, self.sides)

    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        fitted_shift = self.X @ (state[0].mean - qstar[0].mean)
        latent_shift = (
            trunc_normal_means(state[1].locations, self.sides)
            - trunc_normal_means(qstar[1].locations, self.sides)
        )
        return float(fitted_shift @ latent_shift)

    def default_start(self) -> MeanFieldState:
        return MeanFieldState((
            MVNormal(np.zeros(self.p), self.precision),
            ProductTruncNormal(np.zeros(self.n), self.sides),
        ))

    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        if j == 0:
            step = scale * center.marginal_sd * rng.standard_normal(self.p)
            return MVNormal(center.mean + step, center.precision)
        return ProductTruncNormal(
            center.locations + scale * rng.standard_normal(self.n), center.sides
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "kappa": self.kappa,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Probit':
        return cls(np.asarray(data["X"], dtype=float), np.asarray(data["y"]), data.get("kappa", 1.0))


@register_model
@dataclass(frozen=True, eq=False)
class GMM2(TargetModel):
    """
    x_i ~ N(0,1)/2 + N(mu,1)/2 with mu ~ N(0, 1/tau0).

    Block 0 is q(mu) = N(m, 1/tau); block 1 is q(z), independent two-point labels where
    the second category is the component centered at mu. The default sweep updates the
    labels first.
    """

    x: np.ndarray
    tau0: float = 1.0

    family: ClassVar[ModelFamily] = ModelFamily.GMM2

    def __post_init__(self):
        x = readonly(self.x, 'x', 1)
        require(x.size >= 1, "x must be non-empty")
        tau0 = float(self.tau0)
        require(np.isfinite(tau0) and tau0 > 0.0, "tau0 must be positive", tau0=tau0)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'tau0', tau0)

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def block_count(self) -> int:
        return 2

    def block_families(self) -> Tuple[Family, ...]:
        return (Family.UNI_NORMAL, Family.PRODUCT_TWO_POINT)

    def block_dims(self) -> Tuple[int, ...]:
        return (1, self.n)

    def default_order(self) -> Tuple[int, ...]:
        return (1, 0)

    def label_logits(self, location: UniNormal) -> np.ndarray:
        """logit p_i(m, tau) = m x_i - (m^2 + 1/tau) / 2."""
        second_moment = location.mean * location.mean + 1.0 / location.precision
        return location.mean * self.x - 0.5 * second_moment

    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        if j == 1:
            return ProductTwoPoint(self.label_logits(state[0]))
        probs = state[1].probs
        precision = self.tau0 + float(np.sum(probs))
        return UniNormal(float(probs @ self.x) / precision, precision)

    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        m, tau = state[0].mean, state[0].precision
        m_star, tau_star = qstar[0].mean, qstar[0].precision
        prob_shift = state[1].probs - qstar[1].probs
        per_point = (self.x - 0.5 * (m + m_star)) * (m - m_star) + 0.5 * (1.0 / tau_star - 1.0 / tau)
        return float(prob_shift @ per_point)

    def default_start(self) -> MeanFieldState:
        return MeanFieldState((
            UniNormal(2.0 * float(np.mean(self.x)), self.tau0 + 0.5 * self.n),
            ProductTwoPoint(np.zeros(self.n)),
        ))

    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        if j == 0:
            return jitter_normal(center, rng, scale, move_precision=True)
        return ProductTwoPoint(center.logits + scale * rng.standard_normal(self.n))

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "x": self.x.tolist(), "tau0": self.tau0}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GMM2':
        return cls(np.asarray(data["x"], dtype=float), data.get("tau0", 1.0))


__all__ = ['Probit', 'GMM2']
