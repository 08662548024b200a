"""
Exceptions raised by the CaviLab library.
"""

from typing import Any, Dict, Optional


class CaviLabError(Exception):
    """Base exception for CaviLab errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        if self.details:
            return f"{self.message} - Details: {self.details}"
        return self.message


class ParameterError(CaviLabError):
    """Invalid density or model parameters."""
    pass


class FamilyMismatchError(CaviLabError):
    """Two block densities belong to different families (or different truncation sides)."""
    pass


class DimensionMismatchError(CaviLabError):
    """Dimensions of two densities, or of a density and a model block, disagree."""
    pass


class BlockIndexError(CaviLabError):
    """Block index outside the model's block range."""

    def __init__(self, index: int, block_count: int):
        super().__init__(
            f"Block index {index} out of range",
            {"index": index, "block_count": block_count}
        )
        self.index = index
        self.block_count = block_count


class ConvergenceError(CaviLabError):
    """Fixed-point iteration did not reach its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message, {"residual": residual, "iterations": iterations})
        self.residual = residual
        self.iterations = iterations


class UnsupportedModelError(CaviLabError):
    """The requested operation is not defined for this model family."""
    pass


class DegenerateTrajectoryError(CaviLabError):
    """Trajectory carries too little information to verify a contraction."""
    pass


class EmptyNeighborhoodError(CaviLabError):
    """No sampled density fell inside the requested neighborhood."""
    pass


class QuadratureError(CaviLabError):
    """Numerical integration did not reach the requested tolerance."""
    pass


class ConfigError(CaviLabError):
    """Malformed experiment configuration."""

    def __init__(self, message: str, field: str):
        super().__init__(f"{field}: {message}", {"field": field})
        self.field = field
