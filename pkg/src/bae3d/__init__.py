"""Unfitted boundary algebraic equation solver on 3D Cartesian lattices.

Solves -lap(u) + sigma*u = f with Dirichlet data on implicitly defined
geometries embedded in a regular grid, by reducing the volume problem to
dense boundary equations built from free-space lattice Green's functions,
solving those with GMRES, and reconstructing the volume solution with a
fast sine-transform box solver.
"""

from .errors import (
    ClosureError,
    ConfigError,
    ExtentError,
    GeometryError,
    ProjectionError,
    QuadratureError,
)
from .geometry import (
    AuxiliaryBox,
    BoundaryCollocation,
    GridClassification,
    LevelSetGeometry,
    build_collocation,
    classify,
    closest_point_projection,
    ellipsoid,
    make_geometry,
    sphere,
    torus,
)
from .krylov import GmresConfig, GmresResult, gmres
from .lattice_ops import BoundaryDensity, apply_Lh, hat_weight
from .lgf import (
    G0_ORIGIN,
    LgfEvalConfig,
    LgfTable,
    build_table_sigma0,
    eval_sigma0_asymptotic,
    eval_sigma0_bessel,
    eval_sigma_positive_table,
    lookup,
)
from .pipeline import (
    RunConfig,
    SolveReport,
    SolveResult,
    convergence_study,
    refinement_configs,
    solve,
)

__version__ = "0.1.0"
