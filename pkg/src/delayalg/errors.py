"""Exception types shared across the package."""

from __future__ import annotations


class DelayAlgError(Exception):
    """Base class for all package-specific errors."""


class ExprSyntaxError(DelayAlgError):
    """Raised on malformed DSL input; carries position and expectation."""

    def __init__(self, message: str, line: int, column: int, expected: str = ""):
        self.line = line
        self.column = column
        self.expected = expected
        loc = f"line {line}, column {column}"
        super().__init__(f"{message} ({loc})" + (f"; expected {expected}" if expected else ""))


class UnknownSymbolError(DelayAlgError):
    """An identifier in the input is not a declared variable or constant."""

    def __init__(self, name: str, line: int = 0, column: int = 0):
        self.name = name
        self.line = line
        self.column = column
        super().__init__(f"unknown symbol '{name}' (line {line}, column {column})")


class DomainError(DelayAlgError):
    """A substitution or rewrite forced an identically-zero denominator."""


class EvalError(DelayAlgError):
    """Numeric evaluation failed (unassigned atom or denominator in the guard band)."""


class DivisionError(DelayAlgError):
    """Division step needs a certifiably-nonzero leading coefficient and lacks one."""


class CertificateError(DelayAlgError):
    """An inverse/unimodularity certificate failed re-verification."""


class IntegrationFailure(DelayAlgError):
    """The integrating-factor search failed; carries the attempted factor list."""

    def __init__(self, message: str, attempts: list | None = None):
        self.attempts = attempts or []
        super().__init__(message)


class SolveError(DelayAlgError):
    """A symbolic solve fell outside the rational-linear fragment."""


class DimensionError(DelayAlgError):
    """The input differentials do not have the required rank."""


class BudgetExhausted(DelayAlgError):
    """The iteration budget ran out before the loop stabilised."""


class ConditionCViolation(DelayAlgError):
    """A constraint submodule failed the closedness/causality check."""

    def __init__(self, message: str, witness=None, constraints=None):
        self.witness = witness
        self.constraints = constraints
        super().__init__(message)


class StepFailure(DelayAlgError):
    """Numeric integration hit a guarded denominator or non-finite value."""


class CoverageError(DelayAlgError):
    """A delayed sample was requested before the start of the history interval."""


class SingularE0(DelayAlgError):
    """The degree-0 coefficient matrix is rank-deficient; no neutral form exists."""
