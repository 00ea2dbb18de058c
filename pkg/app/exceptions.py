"""
Exception hierarchy for the collision toolkit.

Every error derives from LoccError and from the builtin it specialises, so
callers may catch either.
"""
from typing import Optional


class LoccError(Exception):
    """Base class for toolkit errors."""


class MeshParseError(LoccError, ValueError):
    """OBJ input could not be parsed."""


class DegenerateMeshError(LoccError, ValueError):
    """A mesh violates a structural invariant (bad index, zero-area triangle)."""

    def __init__(self, message: str, triangle_index: Optional[int] = None):
        super().__init__(message)
        self.triangle_index = triangle_index


class DegenerateHullError(LoccError, ValueError):
    """Convex hull input is coplanar or has fewer than four points."""


class ShapeMismatchError(LoccError, ValueError):
    """Tensor shapes do not line up for an operation."""


class NonFiniteError(LoccError, ArithmeticError):
    """A tensor operation produced NaN or Inf."""


class EmptyInputError(LoccError, ValueError):
    """An operation received an empty collection it cannot reduce."""


class PoseSamplingError(LoccError, RuntimeError):
    """Could not draw a disjoint initial pose pair within the attempt budget."""


class CollidingPairError(LoccError, ValueError):
    """Distance manipulation requires a disjoint input pair."""


class DatasetBalanceError(LoccError, RuntimeError):
    """Dataset generation did not reach its positive quota within the redraw budget."""


class CheckpointError(LoccError, ValueError):
    """A checkpoint is missing, truncated or inconsistent with its manifest."""


class DivergenceError(LoccError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class SimulationError(LoccError, RuntimeError):
    """Simulation state became non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
