"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the domain where the quantity is defined."""


class SingularLocusError(DomainError):
    """Point lies on the crack, a seam or a twist where a derivative is undefined."""


class BranchError(DomainError):
    """Radius sits exactly on the r0 branch cut."""


class ClampError(ValueError):
    """Stretch factor too close to +-1."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class ParseError(ValueError):
    """Malformed input file or shape descriptor."""


class PreconditionError(ValueError):
    """Operation called outside its documented precondition."""


class NoProgressError(RuntimeError):
    """No expansion case produced a positive measure gain."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BudgetExhaustedError(RuntimeError):
    """Iteration budget ran out before the target measure was reached."""

    def __init__(self, message, trace=None, partial=None):
        super().__init__(message)
        self.trace = trace or []
        self.partial = partial
