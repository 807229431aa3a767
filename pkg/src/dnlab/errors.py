"""Exception types shared across the package."""


class DnlabError(Exception):
    """Base class for package errors."""


class ValidationError(DnlabError, ValueError):
    """A precondition or admissibility check failed."""


class NumericalError(DnlabError, ArithmeticError):
    """A computation produced unusable numbers (instability, branch cut, ...)."""
