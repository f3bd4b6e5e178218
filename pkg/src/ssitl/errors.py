"""Exception hierarchy.

Every exception carries an ``exit_code`` so the command line front end can
map failures onto its documented process exit codes without a lookup table.
"""

from __future__ import annotations


class SSITLError(Exception):
    exit_code = 1


class ConfigError(SSITLError, ValueError):
    exit_code = 2


class ModelError(SSITLError, ValueError):
    exit_code = 3


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ModelSemanticError(ModelError):
    pass


class UnsupportedLawError(ModelError):
    """A propensity expression that is not a polynomial in the species counts."""


class NumericalError(SSITLError, ArithmeticError):
    exit_code = 4


class LinearSolveError(NumericalError):
    pass


class NewtonConvergenceError(NumericalError):
    pass


class PoissonOverflowError(NumericalError, OverflowError):
    pass


class FitError(NumericalError):
    pass


class LevelRangeError(NumericalError):
    pass


class BudgetError(SSITLError, RuntimeError):
    exit_code = 5


class StageError(SSITLError):
    """Wraps a failure inside the estimator pipeline with the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
