"""Exception types shared across the package."""


class LatwalkError(Exception):
    """Base class for all package errors."""


class UnsupportedDomain(LatwalkError):
    """Domain kind or feature outside the supported family."""


class EmptyLattice(LatwalkError):
    """No usable lattice sites (empty or only isolated sites)."""


class AlphaTooSmall(LatwalkError):
    """Some boundary patch has no admissible site within alpha * 2^-k."""


class ModeUnsatisfiable(LatwalkError):
    """Requested assignment mode cannot cover the graph boundary."""


class NonpositiveWeight(LatwalkError):
    """A conductance came out <= 0; the lattice is too coarse for this drift."""


class TooManySites(LatwalkError):
    """Site count exceeds the cap for dense/spectral kernel work."""


class MismatchedLevel(LatwalkError):
    """Path, assignment and lattice were built at different levels k."""


class UnsupportedOrder(LatwalkError):
    """Moment order above the implemented maximum."""


class NoConvergence(LatwalkError):
    """Iterative refinement stalled before reaching its tolerance."""


class ConfigError(LatwalkError):
    """Invalid or malformed experiment configuration."""
