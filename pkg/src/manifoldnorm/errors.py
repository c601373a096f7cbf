"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid geometric input (bad point, tangent, or group element)."""


class ManifoldMismatchError(GeometryError):
    """Operands live on different manifolds."""


class CutLocusError(GeometryError):
    """Operation undefined at or beyond the cut locus (antipodal points,
    rotation planes at angle pi, norms beyond the injectivity radius)."""


class ConvergenceError(RuntimeError):
    """An iterative kernel failed to converge within its iteration cap."""


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class FormatError(ValueError):
    """Malformed binary tensor file."""


class NumericalError(RuntimeError):
    """Non-finite values or a diverged computation in the harness."""
