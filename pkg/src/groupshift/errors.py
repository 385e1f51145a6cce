"""Exception types shared across the package."""

from __future__ import annotations


class GroupShiftError(Exception):
    """Base class for all package errors."""


class SchemaError(GroupShiftError):
    """Invalid feature schema or schema/data mismatch."""


class IngestError(GroupShiftError):
    """CSV parsing failure; message carries row/column context."""


class GroupingError(GroupShiftError):
    """Group assignment failed or group universes are inconsistent."""


class SinkhornError(GroupShiftError):
    """Sinkhorn solver did not converge within the iteration budget."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DegenerateShiftError(GroupShiftError):
    """Source and target coincide, so PercentExplained is undefined."""


class OptimizationError(GroupShiftError):
    """Non-finite loss or other failure inside a descent loop."""


class RunDirectoryError(GroupShiftError):
    """Missing or corrupted run artifacts."""
