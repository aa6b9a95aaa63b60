"""End-to-end solver: classify, build boundary system, GMRES, reconstruct.

The run follows the boundary-algebraic recipe: precompute the Green's table,
classify the grid, compute the particular solution with one box solve, form
the collocation right-hand side, solve the dense boundary system matrix-free
with GMRES (double layer by default), recover the boundary density, then
reconstruct the volume solution with the second box solve.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import boxsolver, krylov, lattice_ops, potentials
from .errors import ConfigError
from .geometry import (
    AuxiliaryBox,
    BoundaryCollocation,
    GridClassification,
    LevelSetGeometry,
    build_collocation,
    classify,
    make_geometry,
)
from .lattice_ops import BoundaryDensity
from .lgf import LgfEvalConfig, LgfTable, build_table_sigma0, eval_sigma_positive_table

FORMULATIONS = ("double", "single", "direct")


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form solution with analytic source; f = -lap(u) + sigma*u."""

    name: str
    u: Callable
    minus_laplacian: Callable  # -lap(u)

    def source(self, sigma: float) -> Callable:
        def f(x, y, z):
            return self.minus_laplacian(x, y, z) + sigma * self.u(x, y, z)

        return f


MANUFACTURED = {
    "quadratic": ManufacturedSolution(
        "quadratic",
        u=lambda x, y, z: x**2 + y**2 + z**2,
        minus_laplacian=lambda x, y, z: np.full_like(np.asarray(x, float), -6.0),
    ),
    "trig": ManufacturedSolution(
        "trig",
        u=lambda x, y, z: np.sin(x) * np.cos(y) * np.sin(z),
        minus_laplacian=lambda x, y, z: 3.0 * np.sin(x) * np.cos(y) * np.sin(z),
    ),
    "zero": ManufacturedSolution(
        "zero",
        u=lambda x, y, z: np.zeros_like(np.asarray(x, float)),
        minus_laplacian=lambda x, y, z: np.zeros_like(np.asarray(x, float)),
    ),
}


@dataclass
class RunConfig:
    """One solver run; JSON keys match the field names, CLI flags override."""

    geometry: str = "ellipsoid"
    geometry_params: dict = field(
        default_factory=lambda: {"a": 1.0, "b": 0.8, "c": 0.4}
    )
    ell: float = 0.25
    n: int | None = 5  # grid exponent, N = 2^n - 1
    N: int | None = None  # explicit interior points (overrides n)
    sigma: float = 0.0
    formulation: str = "double"
    tol: float = 1e-8
    max_iter: int = 500
    exact: str | None = None  # manufactured-solution name
    lgf_cache: str | None = None
    out_dir: str | None = None
    lgf: LgfEvalConfig = field(default_factory=LgfEvalConfig)
    # programmatic problems: callables override the named solution
    f: Callable | None = None
    g: Callable | None = None
    u_exact: Callable | None = None

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ConfigError(
                f"formulation {self.formulation!r} not one of {FORMULATIONS}"
            )
        if self.exact is not None and self.exact not in MANUFACTURED:
            raise ConfigError(
                f"unknown exact solution {self.exact!r}; "
                f"choose from {sorted(MANUFACTURED)}"
            )
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        if self.N is None and self.n is None:
            raise ConfigError("one of n (exponent) or N (points) is required")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "lgf" in data and isinstance(data["lgf"], dict):
            data = dict(data)
            data["lgf"] = LgfEvalConfig(**data["lgf"])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def resolve_problem(self):
        """Final (f, g, u_exact) callables for this run."""
        f, g, u_exact = self.f, self.g, self.u_exact
        if self.exact is not None:
            sol = MANUFACTURED[self.exact]
            f = f or sol.source(self.sigma)
            g = g or sol.u
            u_exact = u_exact or sol.u
        return f, g, u_exact


@dataclass
class SolveReport:
    """Run metadata and results; everything here serializes to JSON."""

    N: int
    h: float
    ell: float
    sigma: float
    geometry: str
    geometry_params: dict
    formulation: str
    n_gamma_plus: int
    n_gamma_minus: int
    lgf_extent: int
    lgf_sigma_eff: float
    gmres_iterations: int
    gmres_converged: bool
    gmres_final_residual: float
    residual_history: list
    box_solves: int
    max_error: float | None
    exact: str | None
    timings: dict

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


@dataclass
class SolveResult:
    report: SolveReport
    solution: np.ndarray  # box grid; meaningful on M+
    error: np.ndarray | None  # |u - u_exact| on M+, zero elsewhere
    cls: GridClassification
    colloc: BoundaryCollocation
    config: RunConfig


def _gamma_extent(cls: GridClassification) -> int:
    nodes = np.concatenate([cls.gamma_plus, cls.gamma_minus])
    return int((nodes.max(axis=0) - nodes.min(axis=0)).max()) + 2


def build_table(
    sigma_eff: float, extent: int, cfg: LgfEvalConfig, cache_dir: str | None
) -> LgfTable:
    if sigma_eff == 0.0:
        return build_table_sigma0(extent, cfg, cache_dir=cache_dir)
    return eval_sigma_positive_table(sigma_eff, extent, cfg, cache_dir=cache_dir)


def solve(cfg: RunConfig) -> SolveResult:
    """Run the full unfitted boundary solve described by ``cfg``."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    geom = make_geometry(cfg.geometry, cfg.geometry_params)
    box = (
        AuxiliaryBox.with_points(cfg.N, cfg.ell)
        if cfg.N is not None
        else AuxiliaryBox.from_exponent(cfg.n, cfg.ell)
    )
    cls = classify(box, geom)
    timings["classify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sigma_eff = cfg.sigma * box.h**2
    extent = _gamma_extent(cls)
    table = build_table(sigma_eff, extent, cfg.lgf, cfg.lgf_cache)
    timings["lgf_table"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    colloc = build_collocation(cls, geom)
    phi_plus, phi_minus = lattice_ops.build_phi_matrices(colloc, cls, box.h)
    timings["collocation"] = time.perf_counter() - t0

    f, g, u_exact = cfg.resolve_problem()

    t0 = time.perf_counter()
    plan = boxsolver.make_plan(box.N, box.h, cfg.sigma)
    u_particular = boxsolver.particular_solution(f, cls, cfg.sigma, box.h, plan)
    up_gamma = lattice_ops.trace(u_particular, cls)
    timings["particular"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pts = colloc.points
    g_vals = (
        np.asarray(g(pts[:, 0], pts[:, 1], pts[:, 2]), dtype=np.float64)
        if g is not None
        else np.zeros(colloc.count)
    )
    b = g_vals - phi_plus @ up_gamma.plus - phi_minus @ up_gamma.minus

    gm_res, v_gamma = _solve_boundary_system(
        cfg, cls, table, sigma_eff, phi_plus, phi_minus, b
    )
    timings["boundary_system"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    u_gamma = v_gamma + up_gamma
    u = boxsolver.reconstruct(
        u_gamma, cls, cfg.sigma, box.h, plan, particular=u_particular
    )
    timings["reconstruct"] = time.perf_counter() - t0
    assert plan.solves == 2, f"expected 2 box solves, ran {plan.solves}"

    error_grid = None
    max_error = None
    if u_exact is not None:
        coords = cls.node_coords(np.argwhere(cls.inside))
        exact_vals = u_exact(coords[:, 0], coords[:, 1], coords[:, 2])
        err = np.abs(u[cls.inside] - exact_vals)
        max_error = float(err.max())
        error_grid = np.zeros_like(u)
        error_grid[cls.inside] = err

    report = SolveReport(
        N=box.N,
        h=box.h,
        ell=cfg.ell,
        sigma=cfg.sigma,
        geometry=cfg.geometry,
        geometry_params=cfg.geometry_params,
        formulation=cfg.formulation,
        n_gamma_plus=cls.n_plus,
        n_gamma_minus=cls.n_minus,
        lgf_extent=table.extent,
        lgf_sigma_eff=sigma_eff,
        gmres_iterations=gm_res.iterations,
        gmres_converged=gm_res.converged,
        gmres_final_residual=gm_res.true_residual,
        residual_history=[float(r) for r in gm_res.residuals],
        box_solves=plan.solves,
        max_error=max_error,
        exact=cfg.exact,
        timings=timings,
    )
    return SolveResult(
        report=report,
        solution=u,
        error=error_grid,
        cls=cls,
        colloc=colloc,
        config=cfg,
    )


def _solve_boundary_system(
    cfg: RunConfig,
    cls: GridClassification,
    table: LgfTable,
    sigma_eff: float,
    phi_plus,
    phi_minus,
    b: np.ndarray,
) -> tuple[krylov.GmresResult, BoundaryDensity]:
    """GMRES on the chosen formulation; returns the gamma density."""
    gcfg = krylov.GmresConfig(tol=cfg.tol, max_iter=cfg.max_iter)

    if np.linalg.norm(b) == 0.0:
        zero = BoundaryDensity(np.zeros(cls.n_plus), np.zeros(cls.n_minus))
        return krylov.GmresResult(
            x=np.zeros(cls.n_minus), residuals=[0.0], converged=True
        ), zero

    if cfg.formulation in ("double", "single"):
        kind = "double" if cfg.formulation == "double" else "single"
        sets = potentials.outside_neighbor_sets(cls) if kind == "double" else None
        op_plus = potentials.make_layer_operator(
            f"{kind}_plus", table, cls, sets=sets
        )
        op_minus = potentials.make_layer_operator(
            f"{kind}_minus", table, cls, sets=sets
        )

        def apply(q):
            return phi_plus @ op_plus(q) + phi_minus @ op_minus(q)

        res = krylov.gmres(apply, b, gcfg)
        v = BoundaryDensity(plus=op_plus(res.x), minus=op_minus(res.x))
        return res, v

    # direct formulation: unknowns are the gamma density itself
    p_plus = potentials.make_layer_operator(
        "direct_pplus", table, cls, sigma_eff=sigma_eff
    )
    p_minus = potentials.make_layer_operator(
        "direct_pminus", table, cls, sigma_eff=sigma_eff
    )
    n_p = cls.n_plus

    def apply_direct_system(x):
        vp, vm = x[:n_p], x[n_p:]
        r1 = vp - p_plus(vp) - p_minus(vm)
        r2 = phi_plus @ vp + phi_minus @ vm
        return np.concatenate([r1, r2])

    rhs = np.concatenate([np.zeros(n_p), b])
    res = krylov.gmres(apply_direct_system, rhs, gcfg)
    v = BoundaryDensity(plus=res.x[:n_p], minus=res.x[n_p:])
    return res, v


@dataclass
class StudyRow:
    N: int
    max_error: float
    rate: float | None
    degenerate: bool
    gmres_iterations: int


@dataclass
class StudyResult:
    rows: list[StudyRow]
    results: list[SolveResult]


def convergence_study(cfgs: list[RunConfig]) -> StudyResult:
    """Run a refinement sequence and tabulate max errors and observed rates.

    rate_i = log2(e_{i-1} / e_i) between successive rows; equal errors are
    flagged degenerate with rate 0.
    """
    rows: list[StudyRow] = []
    results: list[SolveResult] = []
    prev_err = None
    for cfg in cfgs:
        result = solve(cfg)
        results.append(result)
        err = result.report.max_error
        if err is None:
            raise ConfigError("convergence study needs an exact solution")
        rate = None
        degenerate = False
        if prev_err is not None:
            ratio = prev_err / err if err > 0 else np.inf
            if ratio == 1.0:
                rate, degenerate = 0.0, True
            else:
                rate = float(np.log2(ratio))
        rows.append(
            StudyRow(
                N=result.report.N,
                max_error=err,
                rate=rate,
                degenerate=degenerate,
                gmres_iterations=result.report.gmres_iterations,
            )
        )
        prev_err = err
    return StudyResult(rows=rows, results=results)


def refinement_configs(base: RunConfig, exponents: list[int]) -> list[RunConfig]:
    """Same problem at a sequence of grid exponents."""
    return [replace(base, n=n, N=None) for n in exponents]
