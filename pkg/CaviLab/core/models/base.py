"""
Target models and the mean-field state they act on.

A ``TargetModel`` knows its block families, the exact single-block CAVI update, the
interaction term of one block against the rest, and how to move a block inside its family
(for initializations and for neighborhood sampling). Concrete models register themselves
with ``register_model`` so that they can be rebuilt from JSON.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, ClassVar, Dict, Iterator, Optional, Tuple, Type, TypeVar

import numpy as np

from CaviLab.core.divergences import (
    BlockDensity,
    Family,
    Gamma,
    MVNormal,
    ProductTruncNormal,
    ProductTwoPoint,
    TruncNormal,
    TwoPoint,
    UniNormal,
    density_from_dict,
    densities_close,
    kl,
    mean,
)
from CaviLab.core.exceptions import (
    BlockIndexError,
    DimensionMismatchError,
    FamilyMismatchError,
    ParameterError,
    UnsupportedModelError,
)


class ModelFamily(Enum):
    """Closed-form target families."""
    DISCRETE_2D = "discrete2d"
    GAUSSIAN_BLOCKS = "gaussian_blocks"
    GAUSS_CONDITIONALS = "gauss_conditionals"
    PROBIT = "probit"
    GAUSS_MEAN_PREC = "gauss_mean_prec"
    GMM2 = "gmm2"
    COMPOUND_SYMMETRY = "compound_symmetry"


@dataclass(frozen=True, eq=False)
class MeanFieldState:
    """Ordered product of block densities: one CAVI iterate."""

    blocks: Tuple[BlockDensity, ...]

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ParameterError("a mean-field state needs at least one block")
        for block in blocks:
            if not isinstance(block, BlockDensity):
                raise ParameterError("state blocks must be block densities", {"type": type(block).__name__})
        object.__setattr__(self, 'blocks', blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, j: int) -> BlockDensity:
        return self.blocks[j]

    def __iter__(self) -> Iterator[BlockDensity]:
        return iter(self.blocks)

    def replace(self, j: int, block: BlockDensity) -> 'MeanFieldState':
        """Copy of the state with block ``j`` swapped."""
        blocks = list(self.blocks)
        blocks[j] = block
        return MeanFieldState(tuple(blocks))

    def close_to(self, other: 'MeanFieldState', atol: float = 1e-12) -> bool:
        return len(self) == len(other) and all(
            densities_close(a, b, atol) for a, b in zip(self.blocks, other.blocks)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"blocks": [block.to_dict() for block in self.blocks]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MeanFieldState':
        try:
            return cls(tuple(density_from_dict(block) for block in data["blocks"]))
        except (KeyError, TypeError) as e:
            raise ParameterError("state must carry a 'blocks' list", {"reason": str(e)}) from e


def perturb_density(block: BlockDensity, scale: float) -> BlockDensity:
    """
    Shift a density's location by ``scale`` posterior standard deviations.

    Normal means move by scale sd; gamma means move up by scale sd (through the rate);
    two-point logits move by scale sqrt(r(1-r)); truncated-normal locations move by scale.
    """
    if isinstance(block, UniNormal):
        return UniNormal(block.mean + scale * block.sd, block.precision)
    if isinstance(block, MVNormal):
        return MVNormal(block.mean + scale * block.marginal_sd, block.precision)
    if isinstance(block, Gamma):
        return Gamma(block.shape, block.rate / (1.0 + scale / math.sqrt(block.shape)))
    if isinstance(block, TwoPoint):
        r = block.prob_second
        return TwoPoint(block.logit + scale * math.sqrt(r * (1.0 - r)))
    if isinstance(block, ProductTwoPoint):
        r = block.probs
        return ProductTwoPoint(block.logits + scale * np.sqrt(r * (1.0 - r)))
    if isinstance(block, TruncNormal):
        return TruncNormal(block.location + scale, block.side)
    if isinstance(block, ProductTruncNormal):
        return ProductTruncNormal(block.locations + scale, block.sides)
    raise FamilyMismatchError("unknown density type", {"type": type(block).__name__})


class TargetModel(ABC):
    """
    A target density pi_n together with its mean-field geometry.

    Subclasses are frozen dataclasses; array fields are read-only.
    """

    family: ClassVar[ModelFamily]

    @property
    @abstractmethod
    def block_count(self) -> int:
        """Number of mean-field blocks."""

    @abstractmethod
    def block_families(self) -> Tuple[Family, ...]:
        """Conjugate family of each block."""

    @abstractmethod
    def block_dims(self) -> Tuple[int, ...]:
        """Dimension of each block."""

    @abstractmethod
    def update(self, state: MeanFieldState, j: int) -> BlockDensity:
        """Exact minimizer of the objective over block ``j`` with the other blocks fixed."""

    @abstractmethod
    def interaction(self, state: MeanFieldState, qstar: MeanFieldState, j: int) -> float:
        """
        Interaction term of block ``j`` against the remaining blocks.

        For two-block models this is the same number for both blocks.
        """

    @abstractmethod
    def default_start(self) -> MeanFieldState:
        """Documented starting state for fixed-point iteration."""

    @abstractmethod
    def sample_block(
        self, j: int, center: BlockDensity, rng: np.random.Generator, scale: float
    ) -> BlockDensity:
        """Random density of block ``j``'s restricted family, spread ``scale`` around ``center``."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """JSON-compatible parameters including the ``family`` tag."""

    @classmethod
    @abstractmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TargetModel':
        """Inverse of ``to_dict``."""

    def default_order(self) -> Tuple[int, ...]:
        return tuple(range(self.block_count))

    def closed_form_fixed_point(self) -> Optional[MeanFieldState]:
        return None

    def perturb_block(self, j: int, block: BlockDensity, scale: float) -> BlockDensity:
        return perturb_density(block, scale)

    def check_block(self, j: int, block: BlockDensity) -> None:
        """
        Raise unless ``block`` is a valid density for block ``j``.

        Raises:
            BlockIndexError, FamilyMismatchError, DimensionMismatchError
        """
        self.check_index(j)
        expected = self.block_families()[j]
        if block.family is not expected:
            raise FamilyMismatchError(
                f"block {j} must be {expected.value}",
                {"block": j, "family": block.family.value}
            )
        if block.dim != self.block_dims()[j]:
            raise DimensionMismatchError(
                f"block {j} has the wrong dimension",
                {"block": j, "expected": self.block_dims()[j], "got": block.dim}
            )

    def check_index(self, j: int) -> None:
        if not isinstance(j, (int, np.integer)) or not 0 <= j < self.block_count:
            raise BlockIndexError(j, self.block_count)

    def check_state(self, state: MeanFieldState) -> None:
        if len(state) != self.block_count:
            raise DimensionMismatchError(
                "state has the wrong number of blocks",
                {"expected": self.block_count, "got": len(state)}
            )
        for j, block in enumerate(state):
            self.check_block(j, block)

    def objective_gap(self, state: MeanFieldState, qstar: MeanFieldState) -> float:
        """F(q) - F(q*) = sum_j KL(q_j || q*_j) - interaction, valid for two blocks."""
        if self.block_count != 2:
            raise UnsupportedModelError(
                "objective gap needs a two-block model", {"family": self.family.value}
            )
        total = sum(kl(state[j], qstar[j]) for j in range(self.block_count))
        return total - self.interaction(state, qstar, 0)

    def with_params(self, **overrides: Any) -> 'TargetModel':
        """Copy of the model with some parameters replaced (used by sweeps)."""
        data = self.to_dict()
        data.update(overrides)
        return type(self).from_dict(data)


ModelT = TypeVar('ModelT', bound=Type[TargetModel])

MODEL_TYPES: Dict[ModelFamily, Type[TargetModel]] = {}


def register_model(cls: ModelT) -> ModelT:
    """Class decorator adding a model type to ``MODEL_TYPES``."""
    MODEL_TYPES[cls.family] = cls
    return cls


def require(condition: bool, message: str, **details: Any) -> None:
    """Raise ``ParameterError`` with ``details`` unless ``condition`` holds."""
    if not condition:
        raise ParameterError(message, details or None)


def readonly(values: Any, name: str, ndim: int, dtype: Callable = float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    require(array.ndim == ndim, f"{name} must have {ndim} dimension(s)", shape=array.shape)
    require(bool(np.all(np.isfinite(array))), f"{name} must be finite")
    array.setflags(write=False)
    return array


def jitter_normal(
    block: UniNormal, rng: np.random.Generator, scale: float,
    move_mean: bool = True, move_precision: bool = False
) -> UniNormal:
    location = block.mean + scale * block.sd * rng.standard_normal() if move_mean else block.mean
    precision = block.precision
    if move_precision:
        precision = block.precision * math.exp(0.5 * scale * rng.standard_normal())
    return UniNormal(location, precision)


def stacked_means(state: MeanFieldState) -> np.ndarray:
    """Concatenated first moments of all blocks."""
    return np.concatenate([np.atleast_1d(mean(block)) for block in state])


__all__ = [
    'ModelFamily',
    'MeanFieldState',
    'TargetModel',
    'MODEL_TYPES',
    'register_model',
    'perturb_density',
    'jitter_normal',
    'readonly',
    'require',
    'stacked_means',
]
