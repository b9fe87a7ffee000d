"""Exception types raised across the package."""


class InputError(ValueError):
    """Malformed input: dimension mismatch, unknown outcome, wrong constraint variant."""


class PreconditionError(ValueError):
    """An operation was called on a point or state outside its domain."""


class ParameterError(ValueError):
    """A numeric parameter lies outside its admissible range."""


class ConfigurationError(ValueError):
    """A configuration document or constant bundle is incomplete or inconsistent."""


class GenerationError(RuntimeError):
    """A random problem instance could not be generated."""


class DegenerateMatrixError(ValueError):
    """A matrix has no eigenvalue above the numerical-zero threshold."""


class InvariantViolation(AssertionError):
    """A monitored invariant failed during a run."""
