"""
Exponential-family block densities.

Every density is an immutable value. Vector parameters are stored as read-only numpy
arrays. Two-point densities are parameterized by their logit, the natural parameter,
which keeps probabilities near 0 or 1 exact.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Any, ClassVar, Dict, Iterable, Sequence, Tuple, Type

import numpy as np
import scipy.linalg
from scipy.special import expit, logit

from CaviLab.config import Config
from CaviLab.core.exceptions import (
    DimensionMismatchError,
    FamilyMismatchError,
    ParameterError,
)

LOGIT_BOUND = float(logit(1.0 - Config.PROB_CLAMP))


class Family(Enum):
    """Density families a mean-field block can belong to."""
    UNI_NORMAL = "uni_normal"
    MV_NORMAL = "mv_normal"
    GAMMA = "gamma"
    TWO_POINT = "two_point"
    TRUNC_NORMAL = "trunc_normal"
    PRODUCT_TRUNC_NORMAL = "product_trunc_normal"
    PRODUCT_TWO_POINT = "product_two_point"


class Side(Enum):
    """Truncation side of a unit-variance normal."""
    POSITIVE = 1
    NEGATIVE = -1


def _finite(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite", {name: value})
    return value


def _positive(value: float, name: str) -> float:
    value = _finite(value, name)
    if value <= 0.0:
        raise ParameterError(f"{name} must be strictly positive", {name: value})
    return value


def _frozen_array(values: Any, name: str, ndim: int = 1) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise ParameterError(f"{name} must have {ndim} dimension(s)", {"shape": array.shape})
    if not np.all(np.isfinite(array)):
        raise ParameterError(f"{name} must be finite")
    array.setflags(write=False)
    return array


def clamp_logits(values: Any) -> np.ndarray:
    """Clamp logits so the implied probabilities stay in [PROB_CLAMP, 1 - PROB_CLAMP]."""
    return np.clip(np.asarray(values, dtype=float), -LOGIT_BOUND, LOGIT_BOUND)


def _mix_precision_weighted(
    prec0: float, mean0: float, prec1: float, mean1: float, alpha: float
) -> Tuple[float, float]:
    precision = (1.0 - alpha) * prec0 + alpha * prec1
    mean = ((1.0 - alpha) * prec0 * mean0 + alpha * prec1 * mean1) / precision
    return mean, precision


class BlockDensity(ABC):
    """
    Base class for block densities.

    Subclasses are frozen dataclasses. ``mix`` is the geometric mixture
    p^(1-alpha) q^alpha, which is a convex combination of natural parameters.
    """

    family: ClassVar[Family]

    @property
    @abstractmethod
    def dim(self) -> int:
        """Dimension of the random variable."""

    @abstractmethod
    def parameters(self) -> Tuple[np.ndarray, ...]:
        """Continuous parameters, used for parameter-equality checks."""

    def structure(self) -> Tuple[Any, ...]:
        """Discrete structure that must agree for two densities to be compared."""
        return (self.dim,)

    @abstractmethod
    def mix(self, other: 'BlockDensity', alpha: float) -> 'BlockDensity':
        """Normalized geometric mixture self^(1-alpha) other^alpha."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """Serialize to a JSON-compatible dict (inverse of ``density_from_dict``)."""

    @classmethod
    @abstractmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BlockDensity':
        """Build from the output of ``to_dict``."""


@dataclass(frozen=True)
class UniNormal(BlockDensity):
    """Univariate normal with precision parameterization."""

    mean: float
    precision: float

    family: ClassVar[Family] = Family.UNI_NORMAL

    def __post_init__(self):
        object.__setattr__(self, 'mean', _finite(self.mean, 'mean'))
        object.__setattr__(self, 'precision', _positive(self.precision, 'precision'))

    @property
    def dim(self) -> int:
        return 1

    @property
    def sd(self) -> float:
        return 1.0 / math.sqrt(self.precision)

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (np.array([self.mean, self.precision]),)

    def mix(self, other: 'UniNormal', alpha: float) -> 'UniNormal':
        mean, precision = _mix_precision_weighted(
            self.precision, self.mean, other.precision, other.mean, alpha
        )
        return UniNormal(mean, precision)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "mean": self.mean, "precision": self.precision}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'UniNormal':
        return cls(data["mean"], data["precision"])


@dataclass(frozen=True, eq=False)
class MVNormal(BlockDensity):
    """Multivariate normal with precision-matrix parameterization."""

    mean: np.ndarray
    precision: np.ndarray

    family: ClassVar[Family] = Family.MV_NORMAL

    def __post_init__(self):
        mean = _frozen_array(self.mean, 'mean', 1)
        precision = _frozen_array(self.precision, 'precision', 2)
        if precision.shape != (mean.size, mean.size):
            raise DimensionMismatchError(
                "precision shape does not match mean",
                {"mean": mean.shape, "precision": precision.shape}
            )
        if not np.allclose(precision, precision.T, rtol=1e-12, atol=1e-12):
            raise ParameterError("precision must be symmetric")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'precision', precision)
        # Validates positive-definiteness and caches the factor.
        _ = self.chol

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the precision."""
        try:
            factor = scipy.linalg.cholesky(self.precision, lower=True)
        except np.linalg.LinAlgError as e:
            raise ParameterError("precision must be positive-definite", {"reason": str(e)}) from e
        factor.setflags(write=False)
        return factor

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    @property
    def marginal_sd(self) -> np.ndarray:
        """Conditional standard deviations 1/sqrt(diag(P))."""
        return 1.0 / np.sqrt(np.diag(self.precision))

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (self.mean, self.precision)

    def mix(self, other: 'MVNormal', alpha: float) -> 'MVNormal':
        precision = (1.0 - alpha) * self.precision + alpha * other.precision
        shift = (1.0 - alpha) * (self.precision @ self.mean) + alpha * (other.precision @ other.mean)
        factor = scipy.linalg.cho_factor(precision, lower=True)
        return MVNormal(scipy.linalg.cho_solve(factor, shift), precision)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "mean": self.mean.tolist(),
            "precision": self.precision.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MVNormal':
        return cls(np.asarray(data["mean"]), np.asarray(data["precision"]))


@dataclass(frozen=True)
class Gamma(BlockDensity):
    """Gamma with shape/rate parameterization."""

    shape: float
    rate: float

    family: ClassVar[Family] = Family.GAMMA

    def __post_init__(self):
        object.__setattr__(self, 'shape', _positive(self.shape, 'shape'))
        object.__setattr__(self, 'rate', _positive(self.rate, 'rate'))

    @property
    def dim(self) -> int:
        return 1

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (np.array([self.shape, self.rate]),)

    def mix(self, other: 'Gamma', alpha: float) -> 'Gamma':
        return Gamma(
            (1.0 - alpha) * self.shape + alpha * other.shape,
            (1.0 - alpha) * self.rate + alpha * other.rate,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "shape": self.shape, "rate": self.rate}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Gamma':
        return cls(data["shape"], data["rate"])


@dataclass(frozen=True)
class TwoPoint(BlockDensity):
    """
    Distribution on {first, second}; ``logit`` is log(P(second) / P(first)).

    Logits are clamped so that P(second) lies in [PROB_CLAMP, 1 - PROB_CLAMP].
    """

    logit: float

    family: ClassVar[Family] = Family.TWO_POINT

    def __post_init__(self):
        object.__setattr__(self, 'logit', float(clamp_logits(_finite(self.logit, 'logit'))))

    @classmethod
    def from_prob(cls, prob_second: float) -> 'TwoPoint':
        prob_second = float(prob_second)
        if not 0.0 < prob_second < 1.0:
            raise ParameterError("prob_second must lie in (0, 1)", {"prob_second": prob_second})
        return cls(float(logit(prob_second)))

    @property
    def prob_second(self) -> float:
        return float(expit(self.logit))

    @property
    def prob_first(self) -> float:
        return float(expit(-self.logit))

    @property
    def dim(self) -> int:
        return 1

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (np.array([self.logit]),)

    def mix(self, other: 'TwoPoint', alpha: float) -> 'TwoPoint':
        return TwoPoint((1.0 - alpha) * self.logit + alpha * other.logit)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "logit": self.logit}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TwoPoint':
        if "prob_second" in data:
            return cls.from_prob(data["prob_second"])
        return cls(data["logit"])


@dataclass(frozen=True)
class TruncNormal(BlockDensity):
    """Unit-variance normal centered at ``location``, truncated to one side of zero."""

    location: float
    side: Side

    family: ClassVar[Family] = Family.TRUNC_NORMAL

    def __post_init__(self):
        object.__setattr__(self, 'location', _finite(self.location, 'location'))
        if not isinstance(self.side, Side):
            object.__setattr__(self, 'side', Side(self.side))

    @property
    def dim(self) -> int:
        return 1

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (np.array([self.location]),)

    def structure(self) -> Tuple[Any, ...]:
        return (1, self.side)

    def mix(self, other: 'TruncNormal', alpha: float) -> 'TruncNormal':
        return TruncNormal((1.0 - alpha) * self.location + alpha * other.location, self.side)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "location": self.location, "side": self.side.value}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TruncNormal':
        return cls(data["location"], Side(data["side"]))


def _side_array(sides: Iterable[Any]) -> np.ndarray:
    values = np.array([s.value if isinstance(s, Side) else int(s) for s in sides], dtype=np.int8)
    if values.ndim != 1 or not np.all(np.isin(values, (-1, 1))):
        raise ParameterError("sides must be a vector of +1/-1 entries")
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class ProductTruncNormal(BlockDensity):
    """Independent truncated normals; ``sides`` holds +1 (positive) or -1 (negative)."""

    locations: np.ndarray
    sides: np.ndarray

    family: ClassVar[Family] = Family.PRODUCT_TRUNC_NORMAL

    def __post_init__(self):
        locations = _frozen_array(self.locations, 'locations', 1)
        sides = _side_array(self.sides)
        if sides.size != locations.size:
            raise DimensionMismatchError(
                "sides and locations differ in length",
                {"locations": locations.size, "sides": sides.size}
            )
        object.__setattr__(self, 'locations', locations)
        object.__setattr__(self, 'sides', sides)

    @property
    def dim(self) -> int:
        return int(self.locations.size)

    def component(self, i: int) -> TruncNormal:
        return TruncNormal(float(self.locations[i]), Side(int(self.sides[i])))

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (self.locations,)

    def structure(self) -> Tuple[Any, ...]:
        return (self.dim, self.sides.tobytes())

    def mix(self, other: 'ProductTruncNormal', alpha: float) -> 'ProductTruncNormal':
        return ProductTruncNormal(
            (1.0 - alpha) * self.locations + alpha * other.locations, self.sides
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "locations": self.locations.tolist(),
            "sides": self.sides.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ProductTruncNormal':
        return cls(np.asarray(data["locations"]), data["sides"])


@dataclass(frozen=True, eq=False)
class ProductTwoPoint(BlockDensity):
    """Independent two-point densities, one logit per component."""

    logits: np.ndarray

    family: ClassVar[Family] = Family.PRODUCT_TWO_POINT

    def __post_init__(self):
        logits = np.array(clamp_logits(_frozen_array(self.logits, 'logits', 1)))
        logits.setflags(write=False)
        object.__setattr__(self, 'logits', logits)

    @classmethod
    def from_probs(cls, probs: Sequence[float]) -> 'ProductTwoPoint':
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0.0) or np.any(probs >= 1.0):
            raise ParameterError("probabilities must lie in (0, 1)")
        return cls(logit(probs))

    @property
    def probs(self) -> np.ndarray:
        return expit(self.logits)

    @property
    def dim(self) -> int:
        return int(self.logits.size)

    def component(self, i: int) -> TwoPoint:
        return TwoPoint(float(self.logits[i]))

    def parameters(self) -> Tuple[np.ndarray, ...]:
        return (self.logits,)

    def mix(self, other: 'ProductTwoPoint', alpha: float) -> 'ProductTwoPoint':
        return ProductTwoPoint((1.0 - alpha) * self.logits + alpha * other.logits)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "logits": self.logits.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ProductTwoPoint':
        if "probs" in data:
            return cls.from_probs(data["probs"])
        return cls(np.asarray(data["logits"]))


DENSITY_TYPES: Dict[Family, Type[BlockDensity]] = {
    Family.UNI_NORMAL: UniNormal,
    Family.MV_NORMAL: MVNormal,
    Family.GAMMA: Gamma,
    Family.TWO_POINT: TwoPoint,
    Family.TRUNC_NORMAL: TruncNormal,
    Family.PRODUCT_TRUNC_NORMAL: ProductTruncNormal,
    Family.PRODUCT_TWO_POINT: ProductTwoPoint,
}


def density_from_dict(data: Dict[str, Any]) -> BlockDensity:
    """Deserialize any block density from its ``to_dict`` form."""
    try:
        family = Family(data["family"])
    except (KeyError, ValueError) as e:
        raise ParameterError("unknown or missing density family", {"family": data.get("family")}) from e
    try:
        return DENSITY_TYPES[family].from_dict(data)
    except KeyError as e:
        raise ParameterError(f"missing density field {e}", {"family": family.value}) from e


def check_compatible(p: BlockDensity, q: BlockDensity) -> None:
    """
    Raise unless ``p`` and ``q`` share family, dimension and truncation sides.

    Raises:
        FamilyMismatchError: different families or sides
        DimensionMismatchError: different dimensions
    """
    if p.family is not q.family:
        raise FamilyMismatchError(
            "densities belong to different families",
            {"p": p.family.value, "q": q.family.value}
        )
    if p.dim != q.dim:
        raise DimensionMismatchError("densities differ in dimension", {"p": p.dim, "q": q.dim})
    if p.structure() != q.structure():
        raise FamilyMismatchError("truncation sides differ", {"family": p.family.value})


__all__ = [
    'LOGIT_BOUND',
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
    'DENSITY_TYPES',
    'clamp_logits',
    'density_from_dict',
    'check_compatible',
]
