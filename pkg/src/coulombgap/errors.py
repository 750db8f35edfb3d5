"""Exception hierarchy shared by all modules."""


class CoulombGapError(Exception):
    """Base class for every error raised by the package."""


class NumericFailure(CoulombGapError):
    """A numerical routine could not deliver a trustworthy result."""


class NonConvergence(NumericFailure):
    """A truncated series or product hit its term cap before the tolerance."""


class NotConverged(NumericFailure):
    """A root finder or fixed-point iteration stalled."""


class QuadratureFailure(NumericFailure):
    """Quadrature failed or was asked to integrate over an empty support."""


class IllConditioned(NumericFailure):
    """A linear system or orthogonalisation lost too much precision."""


class BranchError(NumericFailure):
    """Square-root branch tracking failed along an evaluation path."""


class DomainViolation(CoulombGapError, ValueError):
    """An argument lies outside the region where an operation is defined."""


class OutsideDomain(DomainViolation):
    """A radius lies outside every window of a potential."""


class DomainError(DomainViolation):
    """A point lies outside the exterior disk |w| >= 1 of a conformal map."""


class OutsideGap(DomainViolation):
    """A point is not in the closed gap between two level curves."""


class BadGeometry(DomainViolation):
    """Radii or capacities violate the required ordering."""


class RegimeError(DomainViolation):
    """An asymptotic formula was requested outside its regime of validity."""


class NoGap(CoulombGapError):
    """The potential does not support a two-component droplet."""


class MassMismatch(CoulombGapError):
    """Droplet masses disagree with the requested partition or ordering."""


class ConfigError(CoulombGapError):
    """Invalid experiment configuration."""
