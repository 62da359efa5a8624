"""Exception hierarchy shared by every module."""


class OrbKoopError(Exception):
    """Base class for all package errors."""


class SingularityError(OrbKoopError, ValueError):
    """A gravitational distance collapsed to zero."""


class PropagationError(OrbKoopError, ArithmeticError):
    """Numerical integration produced a non-finite value."""


class InvalidOrbitError(OrbKoopError, ValueError):
    """Orbit elements do not describe a bound orbit above the body surface."""


class SolverError(OrbKoopError, ArithmeticError):
    """A root solve failed (bad bracket or no convergence)."""


class ConfigError(OrbKoopError, ValueError):
    """Inconsistent or malformed configuration."""


class ShapeError(OrbKoopError, ValueError):
    """Array dimensions do not match what the operation requires."""


class NumericalError(OrbKoopError, ArithmeticError):
    """A linear-algebra kernel failed to converge."""


class DivergenceError(OrbKoopError, ArithmeticError):
    """A rollout or training loss left the finite range."""


class FormatError(OrbKoopError, ValueError):
    """A dataset or model file could not be parsed."""
