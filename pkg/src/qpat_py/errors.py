"""Exception types raised by qpat-py.

Each error derives from the builtin a caller would naturally catch
(``ValueError`` for bad inputs, ``RuntimeError`` for numerical failures)
and from :class:`QpatError`, so the CLI can map any of them to an exit code.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Optional


class QpatError(Exception):
    """Base class for all qpat-py errors."""


# ============================================================================
# Input errors
# ============================================================================


class DimensionError(QpatError, ValueError):
    """Grid too small or fields living on different grids."""


class DomainError(QpatError, ValueError):
    """A coefficient or field violates a positivity requirement."""


class OutOfRangeError(QpatError, ValueError):
    """A sample point lies outside the grid rectangle."""


class ConfigurationError(QpatError, ValueError):
    """Inconsistent metadata or configuration."""


class GeometryError(QpatError, ValueError):
    """Mask or padding geometry that cannot be built."""


class PhantomSpecError(QpatError, ValueError):
    """A phantom specification whose fields leave the declared bounds."""


# ============================================================================
# Numerical failures
# ============================================================================


class IterationError(QpatError, RuntimeError):
    """Linear solver did not reach the requested residual."""

    def __init__(self, message: str, residual: float = float("nan")) -> None:
        super().__init__(message)
        self.residual = residual


class EigenvalueCollisionError(QpatError, RuntimeError):
    """The discrete operator is singular (0 is an eigenvalue)."""


class DivergenceError(QpatError, RuntimeError):
    """Born series terms stopped contracting."""


class OverflowRescalingError(QpatError, ArithmeticError):
    """Exponential envelope would overflow double precision."""


class DivisionHazardError(QpatError, ArithmeticError):
    """Division by a boundary illumination that is too small."""


class DegeneracyError(QpatError, RuntimeError):
    """The vector fields fail to form a basis at some node."""

    def __init__(self, message: str, node: Optional[tuple[int, int]] = None) -> None:
        super().__init__(message)
        self.node = node


class ReconstructionDomainError(QpatError, RuntimeError):
    """Some characteristics never reached the boundary."""

    def __init__(self, message: str, nodes: Sequence[tuple[int, int]] = ()) -> None:
        super().__init__(message)
        self.nodes = list(nodes)


class VanishingSolutionError(QpatError, RuntimeError):
    """The recovered solution u vanishes (or nearly) at a valid node."""


class ModelViolationError(QpatError, RuntimeError):
    """A reconstructed quantity has the wrong sign."""


class StageError(QpatError, RuntimeError):
    """An error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def is_configuration(self) -> bool:
        """Whether the underlying cause is a configuration problem."""
        return isinstance(self.cause, ConfigurationError)
