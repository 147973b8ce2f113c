"""Exception hierarchy shared by every module of the planning toolkit."""
from __future__ import annotations

from typing import Any, Dict, Optional


class CalvinError(Exception):
    """Base class for all errors raised by the toolkit."""


class ShapeError(CalvinError, ValueError):
    """Tensor or array extents are inconsistent with an operation."""


class NonFiniteError(CalvinError, ArithmeticError):
    """An operation produced NaN or infinite values."""

    def __init__(self, op: str) -> None:
        super().__init__(f"Operation '{op}' produced non-finite values")
        self.op = op


class GraphError(CalvinError):
    """The differentiation graph cannot be traversed as requested."""


class CheckpointError(CalvinError):
    """A checkpoint file is malformed or does not match the model."""

    def __init__(self, message: str, name: Optional[str] = None) -> None:
        super().__init__(message if name is None else f"{message}: '{name}'")
        self.name = name


class UnreachableGoalError(CalvinError):
    """No path connects the requested start and goal."""


class TaskPlacementError(CalvinError):
    """A maze admits no start/target pair at the required distance; regenerate it."""


class ConfigError(CalvinError, ValueError):
    """A configuration value is outside its allowed range."""


class TrainingDivergedError(CalvinError):
    """The training loss became non-finite."""

    def __init__(self, message: str, diagnostics: Dict[str, Any]) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics
