# leaptt/errors.py

"""
Exception hierarchy for leaptt.

Every error carries the process exit code the CLI reports for it:
input problems exit with 2, numeric failures with 3.
"""

from typing import Any, Dict, Optional, Sequence, Tuple

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class LeapError(Exception):
    """Base class for all leaptt errors."""

    exit_code = EXIT_UNEXPECTED


# ============================================================================
# Input errors
# ============================================================================


class LeapInputError(LeapError, ValueError):
    """Invalid input: bad shapes, out-of-range indices, malformed files."""

    exit_code = EXIT_INPUT


class ShapeError(LeapInputError):
    """An op received operands whose shapes it cannot combine."""

    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        message = f"Shape mismatch in '{op}': {self.shapes}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class ConfigError(LeapInputError):
    """A configuration field failed validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"Invalid config field '{field}': {message}")


class CorpusFormatError(LeapInputError):
    """A corpus record file or manifest is corrupt or inconsistent."""


class CheckpointError(LeapInputError):
    """A checkpoint file is corrupt or incompatible with the requested config."""


class ProvenanceError(CheckpointError):
    """A checkpoint's recorded parent hash does not match the parent on disk."""


class ParseError(LeapInputError):
    """A line of a JSONL file could not be parsed."""

    def __init__(self, path: str, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


# ============================================================================
# Numeric and usage errors
# ============================================================================


class NumericError(LeapError, ArithmeticError):
    """
    A computation produced a non-finite value or diverged.

    Attributes:
        node_id: Tape node that produced the value, if raised by the autodiff engine
        step: Training or rollout step index, if known
        task: Language index of the task being rolled out, if known
    """

    exit_code = EXIT_NUMERIC

    def __init__(
        self,
        message: str,
        node_id: Optional[int] = None,
        step: Optional[int] = None,
        task: Optional[int] = None,
    ):
        self.base_message = message
        self.node_id = node_id
        self.step = step
        self.task = task
        super().__init__(self._format())

    def _format(self) -> str:
        context: Dict[str, Any] = {"node": self.node_id, "step": self.step, "task": self.task}
        parts = [f"{key}={value}" for key, value in context.items() if value is not None]
        if not parts:
            return self.base_message
        return f"{self.base_message} [{', '.join(parts)}]"

    def annotate(self, **context: Any) -> "NumericError":
        """Return a copy with extra context (step, task) filled in."""
        return NumericError(
            self.base_message,
            node_id=context.get("node_id", self.node_id),
            step=context.get("step", self.step),
            task=context.get("task", self.task),
        )


class UsageError(LeapError, RuntimeError):
    """An API was called in the wrong order or without required state."""

    exit_code = EXIT_INPUT


class StageError(LeapError):
    """A pipeline stage failed; wraps the underlying error with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", EXIT_UNEXPECTED)
        super().__init__(f"Stage '{stage}' failed: {cause}")
