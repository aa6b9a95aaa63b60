"""Exception types shared across the solver."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class GeometryError(ValueError):
    """Geometry does not fit the auxiliary grid, or level set is degenerate."""


class ProjectionError(RuntimeError):
    """Closest-point projection onto the surface failed to converge."""


class ClosureError(RuntimeError):
    """A collocation row has no supporting grid-boundary node."""


class QuadratureError(RuntimeError):
    """Green's function evaluation did not reach the requested tolerance."""


class ExtentError(IndexError):
    """Lookup offset exceeds the tabulated extent (table under-sized for the grid)."""
