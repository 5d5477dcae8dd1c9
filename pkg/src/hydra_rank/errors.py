"""Exception hierarchy shared across the package.

Every error the pipeline can raise intentionally derives from HydraError so
the CLI can map failures to exit codes and a machine-readable JSON payload.
"""

from __future__ import annotations


class HydraError(Exception):
    """Base class for all intentional failures."""

    code = "error"

    def payload(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ShapeMismatchError(HydraError):
    code = "shape-mismatch"


class EmptyInputError(HydraError):
    code = "empty-input"


class MalformedRecordError(HydraError):
    """A gradient-log record failed validation; carries the offending line."""

    code = "malformed-record"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class TrainingDivergedError(HydraError):
    code = "training-diverged"

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class InvalidKError(HydraError):
    code = "invalid-k"


class BudgetTooSmallError(HydraError):
    code = "budget-too-small"


class NonTerminationError(HydraError):
    code = "non-termination"


class RankUnderflowError(HydraError):
    code = "rank-underflow"


class MissingProvenanceError(HydraError):
    code = "missing-provenance"


class InsufficientDataError(HydraError):
    code = "insufficient-data"


class OracleError(HydraError):
    """An oracle evaluation failed; carries the schedule that triggered it."""

    code = "oracle-failure"

    def __init__(self, message: str, schedule=None):
        super().__init__(message)
        self.schedule = schedule


class ConfigError(HydraError):
    """Bad CLI/config input: unknown preset, unreadable file, bad flag combo."""

    code = "config-error"
