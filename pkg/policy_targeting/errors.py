"""
Exception hierarchy for the policy targeting toolkit.

Library code raises these; the command-line entry point catches
``PolicyTargetingError`` and turns it into a logged message and exit code 1.
"""

from typing import Optional, Sequence


class PolicyTargetingError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(PolicyTargetingError):
    """A required column or configuration key is missing or malformed."""


class RowParseError(PolicyTargetingError):
    """One or more cells of an input file could not be parsed."""

    def __init__(self, column: str, rows: Sequence[int], reason: str,
                 path: Optional[str] = None):
        self.column = column
        self.rows = list(rows)
        self.reason = reason
        self.path = path
        shown = ", ".join(str(r) for r in self.rows[:10])
        if len(self.rows) > 10:
            shown += f", ... ({len(self.rows)} rows)"
        where = f" in {path}" if path else ""
        super().__init__(f"Column '{column}'{where}: {reason} at row(s) {shown}")


class DegenerateSplitError(PolicyTargetingError):
    """A split could not keep both treatment arms on both sides."""


class InsufficientDataError(PolicyTargetingError):
    """Too few rows for the requested estimator."""


class DegenerateLabelsError(PolicyTargetingError):
    """A classifier was asked to learn from a single class."""


class ShapeError(PolicyTargetingError):
    """Array dimensions do not match what a model was trained on."""


class LearnerSpecError(PolicyTargetingError):
    """Learner hyperparameters are out of range or unsupported for the task."""


class CrossFitError(PolicyTargetingError):
    """Cross-fitting folds could not be formed."""


class InvariantViolation(PolicyTargetingError):
    """An internal numerical invariant was broken."""


class InfeasibleConfoundingError(PolicyTargetingError):
    """Systematic removal would empty a treatment arm."""


class EmptyAssignmentError(PolicyTargetingError):
    """A policy value was requested for an assignment that treats nobody."""


class ConfigError(PolicyTargetingError):
    """The run configuration is invalid."""
