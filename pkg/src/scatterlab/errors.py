"""Exception hierarchy shared by all scatterlab modules."""


class ScatterlabError(Exception):
    """Base class for every error raised by scatterlab."""


class DomainError(ScatterlabError, ValueError):
    """An argument lies outside the domain of the operation."""


class CapacityError(ScatterlabError):
    """A requested computation exceeds a configured resource bound."""


class PoleError(ScatterlabError, ZeroDivisionError):
    """A spectral parameter sits exactly on a Laplace eigenvalue."""

    def __init__(self, norm, message=None):
        self.norm = norm
        super().__init__(message or f"spectral parameter hits the pole at |xi|^2 = {norm}")


class NumericError(ScatterlabError, ArithmeticError):
    """An iterative numerical procedure failed to converge."""

    def __init__(self, message, bracket=None):
        self.bracket = bracket
        if bracket is not None:
            message = f"{message} (bracket [{bracket[0]!r}, {bracket[1]!r}])"
        super().__init__(message)


class DegenerateConfigurationError(ScatterlabError):
    """A realization is non-generic (coincident points or multi-dimensional kernel)."""


class EmptyEnsembleError(ScatterlabError):
    """Every realization of an ensemble run was excluded."""

    def __init__(self, n_excluded, reasons=None):
        self.n_excluded = n_excluded
        self.reasons = dict(reasons or {})
        detail = ", ".join(f"{k}={v}" for k, v in sorted(self.reasons.items()))
        super().__init__(f"all {n_excluded} realizations were excluded ({detail})")
