"""Exception types shared across the package."""


class CapminkError(ValueError):
    """Base class for all capmink errors."""


class DomainError(CapminkError):
    """A mathematical input is outside its admissible range."""


class ConfigError(CapminkError):
    """A configuration value is structurally invalid (bad grid, bad exponent)."""


class UsageError(CapminkError):
    """Objects from incompatible geometries / angles were combined."""


class WedgeError(DomainError):
    """A (base radius, height) pair lies outside the realizable open wedge."""


class ConvexityError(DomainError):
    """An operation required a strictly convex body and did not get one."""


class ApplicabilityError(CapminkError):
    """An analysis was requested outside the regime where it is meaningful."""
