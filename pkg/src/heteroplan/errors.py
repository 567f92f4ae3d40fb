"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when a spec, plan, or input file fails validation."""


class ProfileLookupError(LookupError):
    """Raised when a profile entry is absent for a requested key."""


class InfeasibleError(RuntimeError):
    """Raised when no feasible plan or layer assignment exists."""
