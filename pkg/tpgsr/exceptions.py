from __future__ import annotations

from typing import Sequence


class TPGSRException(Exception):  # noqa: N818
    """Base exception class for all tpgsr-related exceptions."""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class ShapeError(TPGSRException):
    """Exception raised when operand shapes do not conform."""

    def __init__(self, message: str, shapes: Sequence[Sequence[int]] | None = None):
        self.shapes = [tuple(s) for s in shapes] if shapes else []
        detail = f" (shapes: {', '.join(str(s) for s in self.shapes)})" if self.shapes else ""
        super().__init__(f"Shape error: {message}{detail}")


class GraphError(TPGSRException):
    """Exception raised when the autodiff tape is used out of contract."""

    def __init__(self, message: str):
        super().__init__(f"Graph error: {message}")


class ConfigurationError(TPGSRException):
    """Exception raised when there's an error in the configuration of a run or model."""

    def __init__(self, message: str, component: str | None = None):
        self.component = component
        super().__init__(f"Configuration error{' in ' + component if component else ''}: {message}")


class ValidationError(TPGSRException):
    """Exception raised when an input value violates a precondition."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"Validation error{' for ' + field if field else ''}: {message}")


class DatasetError(TPGSRException):
    """Exception raised when a dataset file cannot be decoded."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"Dataset error{where}: {message}")


class CheckpointError(TPGSRException):
    """Exception raised when a checkpoint is corrupt or does not match the model."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"Checkpoint error{' for ' + path if path else ''}: {message}")


class TrainingError(TPGSRException):
    """Exception raised when a training step produces an unusable result."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(f"Training error{' at step ' + str(step) if step is not None else ''}: {message}")
