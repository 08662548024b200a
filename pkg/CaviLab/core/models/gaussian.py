"""
Gaussian targets: block-partitioned Gaussians, the compound-symmetry precision and the
Gaussian-conditionals density exp(-(u1^2 + u2^2 + u1^2 u2^2)/2).
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, ClassVar, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from CaviLab.core.divergences import (
    BlockDensity,
    Family,
    MVNormal,
    UniNormal,
    kl,
)
from CaviLab.core.exceptions import ParameterError
from CaviLab.core.models.base import (
    MeanFieldState,
    ModelFamily,
    TargetModel,
    jitter_normal,
    readonly,
    register_model,
    require,
)

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


@register_model
@dataclass(frozen=True, eq=False)
class GaussianBlocks(TargetModel):
    """
    N(theta0, (n Q)^-1) split into blocks of sizes ``partition``.

    Scalar blocks are ``UniNormal``; larger blocks are ``MVNormal``. The mean-field
    solution has means theta0_j and precisions n Q_jj.
    """

    theta0: np.ndarray
    Q: np.ndarray
    partition: Tuple[int, ...]
    n_scale: float = 1.0

    family: ClassVar[ModelFamily] = ModelFamily.GAUSSIAN_BLOCKS

    def __post_init__(self):
        theta0 = readonly(self.theta0, 'theta0', 1)
        Q = readonly(self.Q, 'Q', 2)
        require(Q.shape == (theta0.size, theta0.size), "Q must be square and match theta0", shape=Q.shape)
        require(bool(np.allclose(Q, Q.T, rtol=1e-12, atol=1e-12)), "Q must be symmetric")
        try:
            scipy.linalg.cholesky(Q, lower=True)
        except np.linalg.LinAlgError as e:
            raise ParameterError("Q must be positive-definite", {"reason": str(e)}) from e

        partition = tuple(int(size) for size in self.partition)
        require(len(partition) >= 2, "partition needs at least two blocks", partition=partition)
        require(all(size > 0 for size in partition), "block sizes must be positive", partition=partition)
        require(sum(partition) == theta0.size, "partition must sum to the dimension",
                partition=partition, dimension=theta0.size)
        n_scale = float(self.n_scale)
        require(math.isfinite(n_scale) and n_scale > 0.0, "n_scale must be positive", n_scale=n_scale)

        object.__setattr__(self, 'theta0', theta0)
        object.__setattr__(self, 'Q', Q)
        object.__setattr__(self, 'partition', partition)
        object.__setattr__(self, 'n_scale', n_scale)

    @cached_property
    def slices(self) -> Tuple[slice, ...]:
        offsets = np.concatenate([[0], np.cumsum(self.partition)])
        return tuple(slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:]))

    def sub(self, j: int, k: int) -> np.ndarray:
        """Block Q_jk of the unscaled precision."""
        return self.Q[self.slices[j], self.slices[k]]

    @cached_property
    def _diag_factors(self) -> Tuple[Any, ...]:
        return tuple(
            scipy.linalg.cho_factor(self.sub(j, j), lower=True) for j in range(self.block_count)
        )

    @cached_property
    def _block_precisions(self) -> Tuple[np.ndarray, ...]:
        precisions = []
        for j in range(self.block_count):
            precision = self.n_scale * self.sub(j, j)
            precision.setflags(write=False)
            precisions.append(precision)
        return tuple(precisions)

    @property
    def block_count(self) -> int:
        return len(self.partition)

    def block_families(self) -> Tuple[Family, ...]:
        return tuple(Family.UNI_NORMAL if size == 1 else Family.MV_NORMAL for size in self.partition)

    def block_dims(self) -> Tuple[int, ...]:
        return self.partition

    def _density(self, j: int, block_mean: np.ndarray) -> BlockDensity:
        precision = self._block_precisions[j]
        if self.partition[j] == 1:
            return UniNormal(float(block_mean[0]), float(precision[0, 0]))
        return MVNormal(block_mean, precision)

    @staticmethod
    def _mean_of(block: BlockDensity) -> np.ndarray:
        if isinstance(block, UniNormal):
            return np.array([block.mean])
        return block.mean

    def deviations(self, state: MeanFieldState, qstar: MeanFieldState) -> List[np.ndarray]:
        """Mean shifts delta_j = m_j - m*_j of every block."""
        return [self._mean_of(a) - self._mean_of(b) for a, b in zip(state, qstar)]

    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        shift = np.zeros(self.partition[j])
        for k in range(self.block_count):
            if k != j:
                shift += self.sub(j, k) @ (self._mean_of(state[k]) - self.theta0[self.slices[k]])
        if self.partition[j] == 1:
            step = shift / self.Q[self.slices[j].start, self.slices[j].start]
        else:
            step = scipy.linalg.cho_solve(self._diag_factors[j], shift)
        return self._density(j, self.theta0[self.slices[j]] - step)

    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        deltas = self.deviations(state, qstar)
        coupling = sum(
            float(deltas[j] @ self.sub(j, k) @ deltas[k])
            for k in range(self.block_count) if k != j
        )
        return -self.n_scale * coupling

    def objective_gap(self, state: MeanFieldState, qstar: MeanFieldState) -> float:
        # Cross terms of the quadratic only see block means
        deltas = self.deviations(state, qstar)
        total = sum(kl(state[j], qstar[j]) for j in range(self.block_count))
        for j in range(self.block_count):
            for k in range(j + 1, self.block_count):
                total += self.n_scale * float(deltas[j] @ self.sub(j, k) @ deltas[k])
        return total

    def closed_form_fixed_point(self) -> Optional[MeanFieldState]:
        return MeanFieldState(tuple(
            self._density(j, self.theta0[self.slices[j]]) for j in range(self.block_count)
        ))

    def default_start(self) -> MeanFieldState:
        return self.closed_form_fixed_point()

    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        if isinstance(center, UniNormal):
            return jitter_normal(center, rng, scale)
        step = scale * center.marginal_sd * rng.standard_normal(center.dim)
        return MVNormal(center.mean + step, center.precision)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "theta0": self.theta0.tolist(),
            "Q": self.Q.tolist(),
            "partition": list(self.partition),
            "n_scale": self.n_scale,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GaussianBlocks':
        Q = np.asarray(data["Q"], dtype=float)
        theta0 = np.asarray(data.get("theta0", np.zeros(Q.shape[0])), dtype=float)
        partition = data.get("partition") or [1] * theta0.size
        return cls(theta0, Q, tuple(partition), data.get("n_scale", 1.0))


@register_model
@dataclass(frozen=True, eq=False)
class CompoundSymmetry(TargetModel):
    """
    Centered Gaussian with precision (1 - rho) I + rho 1 1' and one scalar block per
    coordinate. The CAVI mean update is m_j <- -rho sum_{k != j} m_k.
    """

    d: int
    rho: float

    family: ClassVar[ModelFamily] = ModelFamily.COMPOUND_SYMMETRY

    def __post_init__(self):
        d = int(self.d)
        rho = float(self.rho)
        require(d >= 2, "d must be at least 2", d=d)
        require(-1.0 / (d - 1) < rho < 1.0, "rho must lie in (-1/(d-1), 1)", d=d, rho=rho)
        object.__setattr__(self, 'd', d)
        object.__setattr__(self, 'rho', rho)

    @cached_property
    def gaussian(self) -> GaussianBlocks:
        precision = (1.0 - self.rho) * np.eye(self.d) + self.rho * np.ones((self.d, self.d))
        return GaussianBlocks(np.zeros(self.d), precision, (1,) * self.d, 1.0)

    @property
    def block_count(self) -> int:
        return self.d

    def block_families(self) -> Tuple[Family, ...]:
        return (Family.UNI_NORMAL,) * self.d

    def block_dims(self) -> Tuple[int, ...]:
        return (1,) * self.d

    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        others = sum(state[k].mean for k in range(self.d) if k != j)
        return UniNormal(-self.rho * others, 1.0)

    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        return self.gaussian.interaction(state, qstar, j)

    def objective_gap(self, state: MeanFieldState, qstar: MeanFieldState) -> float:
        return self.gaussian.objective_gap(state, qstar)

    def closed_form_fixed_point(self) -> Optional[MeanFieldState]:
        return self.gaussian.closed_form_fixed_point()

    def default_start(self) -> MeanFieldState:
        return self.gaussian.default_start()

    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        return jitter_normal(center, rng, scale)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "d": self.d, "rho": self.rho}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CompoundSymmetry':
        return cls(data["d"], data["rho"])


def _second_moment(block: UniNormal) -> float:
    return block.mean * block.mean + 1.0 / block.precision


@register_model
@dataclass(frozen=True, eq=False)
class GaussConditionals(TargetModel):
    """
    Target proportional to exp(-(u1^2 + u2^2 + u1^2 u2^2) / 2).

    Both conditionals are centered normals; the update sets tau_j = 1 + E(U_k^2) and the
    fixed point has tau* equal to the golden ratio.
    """

    family: ClassVar[ModelFamily] = ModelFamily.GAUSS_CONDITIONALS

    @property
    def block_count(self) -> int:
        return 2

    def block_families(self) -> Tuple[Family, ...]:
        return (Family.UNI_NORMAL, Family.UNI_NORMAL)

    def block_dims(self) -> Tuple[int, ...]:
        return (1, 1)

    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        return UniNormal(0.0, 1.0 + _second_moment(state[1 - j]))

    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        return -0.5 * (
            (_second_moment(state[0]) - _second_moment(qstar[0]))
            * (_second_moment(state[1]) - _second_moment(qstar[1]))
        )

    def closed_form_fixed_point(self) -> Optional[MeanFieldState]:
        return MeanFieldState((UniNormal(0.0, GOLDEN_RATIO), UniNormal(0.0, GOLDEN_RATIO)))

    def default_start(self) -> MeanFieldState:
        return MeanFieldState((UniNormal(0.0, 1.0), UniNormal(0.0, 1.0)))

    def perturb_block(self, j: int, block: BlockDensity, scale: float) -> BlockDensity:
        # Means stay at zero; the precision moves away from its lower bound 1.
        return UniNormal(0.0, 1.0 + (block.precision - 1.0) * (1.0 + scale))

    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        excess = max(center.precision - 1.0, 1e-300)
        return UniNormal(0.0, 1.0 + excess * math.exp(scale * rng.standard_normal()))

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GaussConditionals':
        return cls()


__all__ = [
    'GOLDEN_RATIO',
    'GaussianBlocks',
    'CompoundSymmetry',
    'GaussConditionals',
]
