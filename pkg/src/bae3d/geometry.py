"""Implicit geometries, the auxiliary box grid, and grid-point classification.

The solver embeds the domain Omega = {phi < 0} in a cube [-1-ell, 1+ell]^3
discretized by N interior nodes per dimension with zero Dirichlet walls.
Interior lattice points are split into M+ (inside Omega) and M- (outside);
the union of 7-point stencils over each side gives N+ and N-, and the shared
layer gamma = N+ /\ N- is the discrete grid boundary, split into gamma+
(inside) and gamma- (outside).  Each gamma- node is paired with its closest
point on the continuous surface, which later closes the boundary system.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import GeometryError, ProjectionError

# Nodes with |phi| below this count as interior (measure-zero tie-break).
_PHI_TIE_EPS = 1e-14

_STENCIL = ndimage.generate_binary_structure(3, 1)  # 6-neighbor star + center


@dataclass(frozen=True)
class LevelSetGeometry:
    """Implicit surface phi(x,y,z)=0 with interior {phi<0}.

    ``phi`` and ``grad_phi`` must accept broadcastable arrays; ``scale`` sets
    the absolute tolerance used when deciding a point sits on the surface.
    """

    phi: Callable
    grad_phi: Callable
    kind: str = "user"
    params: dict = field(default_factory=dict)
    scale: float = 1.0


def sphere(radius: float) -> LevelSetGeometry:
    def phi(x, y, z):
        return x * x + y * y + z * z - radius * radius

    def grad(x, y, z):
        return 2.0 * x, 2.0 * y, 2.0 * z

    return LevelSetGeometry(phi, grad, "sphere", {"radius": radius}, radius)


def ellipsoid(a: float, b: float, c: float) -> LevelSetGeometry:
    def phi(x, y, z):
        return (x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2 - 1.0

    def grad(x, y, z):
        return 2.0 * x / a**2, 2.0 * y / b**2, 2.0 * z / c**2

    return LevelSetGeometry(phi, grad, "ellipsoid", {"a": a, "b": b, "c": c}, max(a, b, c))


def torus(R: float, r: float) -> LevelSetGeometry:
    def phi(x, y, z):
        rho = np.sqrt(x * x + y * y)
        return (rho - R) ** 2 + z * z - r * r

    def grad(x, y, z):
        rho = np.sqrt(x * x + y * y)
        safe = np.where(rho == 0.0, 1.0, rho)
        f = 2.0 * (rho - R) / safe
        return f * x, f * y, 2.0 * z

    return LevelSetGeometry(phi, grad, "torus", {"R": R, "r": r}, R + r)


GEOMETRY_BUILDERS = {"sphere": sphere, "ellipsoid": ellipsoid, "torus": torus}


def make_geometry(kind: str, params: dict) -> LevelSetGeometry:
    try:
        builder = GEOMETRY_BUILDERS[kind]
    except KeyError:
        raise GeometryError(f"unknown geometry kind {kind!r}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise GeometryError(f"bad parameters for {kind}: {exc}") from None


@dataclass(frozen=True)
class AuxiliaryBox:
    """Cube [-1-ell, 1+ell]^3 with N interior nodes per dimension.

    Node i (0-based) sits at origin + (i+1)*h; the zero-Dirichlet walls are
    the implicit nodes i=-1 and i=N.  h = (2+2*ell)/N, and the transform
    length N+1 is a power of two when N = 2^n - 1.
    """

    ell: float
    N: int
    h: float
    origin: float

    @classmethod
    def from_exponent(cls, n: int, ell: float) -> "AuxiliaryBox":
        if n < 2:
            raise GeometryError("grid exponent n must be >= 2")
        N = 2**n - 1
        return cls.with_points(N, ell)

    @classmethod
    def with_points(cls, N: int, ell: float) -> "AuxiliaryBox":
        if N < 3:
            raise GeometryError("need at least 3 interior points per dimension")
        if ell <= 0:
            raise GeometryError("box margin ell must be positive")
        h = (2.0 + 2.0 * ell) / N
        return cls(ell=ell, N=N, h=h, origin=-(1.0 + ell))

    def coords(self) -> np.ndarray:
        """Interior node coordinates along one axis, shape (N,)."""
        return self.origin + self.h * (np.arange(self.N) + 1.0)


@dataclass
class GridClassification:
    """Point sets over the auxiliary grid, with fixed lexicographic orderings.

    ``inside`` is the M+ mask over the (N,N,N) interior grid (C-order axes
    x,y,z).  ``gamma_plus``/``gamma_minus`` hold node multi-indices as (n,3)
    int arrays sorted lexicographically; all downstream vectors over gamma
    follow these orderings.
    """

    box: AuxiliaryBox
    inside: np.ndarray
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray

    @property
    def n_plus(self) -> int:
        return len(self.gamma_plus)

    @property
    def n_minus(self) -> int:
        return len(self.gamma_minus)

    def gamma_ids(self) -> dict:
        """Map node triple -> column id; gamma+ first, then gamma-."""
        ids = {tuple(p): i for i, p in enumerate(self.gamma_plus)}
        off = self.n_plus
        ids.update({tuple(p): off + i for i, p in enumerate(self.gamma_minus)})
        return ids

    def node_coords(self, nodes: np.ndarray) -> np.ndarray:
        """(n,3) lattice indices -> (n,3) physical coordinates."""
        return self.box.origin + self.box.h * (np.asarray(nodes) + 1.0)

    def in_n_plus(self, node: tuple) -> bool:
        """Membership in N+ = M+ union gamma-."""
        i, j, k = node
        N = self.box.N
        if not (0 <= i < N and 0 <= j < N and 0 <= k < N):
            return False
        if self.inside[i, j, k]:
            return True
        return tuple(node) in self._gamma_minus_set()

    def _gamma_minus_set(self):
        if not hasattr(self, "_gm_set"):
            self._gm_set = {tuple(p) for p in self.gamma_minus}
        return self._gm_set

    def debug_dump(self) -> str:
        """Per-node tag listing for small grids (diagnostics only)."""
        gp = {tuple(p) for p in self.gamma_plus}
        gm = self._gamma_minus_set()
        lines = []
        for idx in np.ndindex(*self.inside.shape):
            if idx in gp:
                tag = "gamma+"
            elif idx in gm:
                tag = "gamma-"
            elif self.inside[idx]:
                tag = "M+"
            else:
                tag = "M-"
            lines.append(f"{idx[0]} {idx[1]} {idx[2]} {tag}")
        return "\n".join(lines)


def classify(box: AuxiliaryBox, geom: LevelSetGeometry) -> GridClassification:
    """Tag every interior node by sign of phi and extract the gamma layers."""
    ax = box.coords()
    xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
    phi = geom.phi(xx, yy, zz)
    inside = phi < _PHI_TIE_EPS * geom.scale
    if not inside.any():
        raise GeometryError("geometry has no interior node on this grid")
    edge = np.zeros_like(inside)
    edge[:2, :, :] = edge[-2:, :, :] = True
    edge[:, :2, :] = edge[:, -2:, :] = True
    edge[:, :, :2] = edge[:, :, -2:] = True
    if (inside & edge).any():
        raise GeometryError(
            "geometry touches the auxiliary box boundary "
            "(interior node within 2 layers of a face); increase ell"
        )
    n_plus_mask = ndimage.binary_dilation(inside, structure=_STENCIL)
    n_minus_mask = ndimage.binary_dilation(~inside, structure=_STENCIL)
    gamma = n_plus_mask & n_minus_mask
    gamma_plus = np.argwhere(gamma & inside)
    gamma_minus = np.argwhere(gamma & ~inside)
    return GridClassification(
        box=box,
        inside=inside,
        gamma_plus=gamma_plus,
        gamma_minus=gamma_minus,
    )


def project_points(
    points: np.ndarray,
    geom: LevelSetGeometry,
    h: float,
    max_iter: int = 50,
) -> np.ndarray:
    """Closest-point projection of an (n,3) batch onto {phi = 0}.

    Newton steps x <- x - phi * grad/|grad|^2 until |phi| <= 1e-12 * scale;
    stragglers fall back to bisection along their initial gradient direction.
    """
    pts = np.array(points, dtype=np.float64)
    tol = 1e-12 * geom.scale
    for _ in range(max_iter):
        p = geom.phi(pts[:, 0], pts[:, 1], pts[:, 2])
        active = np.abs(p) > tol
        if not active.any():
            break
        gx, gy, gz = geom.grad_phi(pts[:, 0], pts[:, 1], pts[:, 2])
        g2 = gx * gx + gy * gy + gz * gz
        if (g2[active] == 0).any():
            raise ProjectionError("vanishing level-set gradient near the surface")
        step = np.where(active, p / g2, 0.0)
        pts[:, 0] -= step * gx
        pts[:, 1] -= step * gy
        pts[:, 2] -= step * gz
    p = geom.phi(pts[:, 0], pts[:, 1], pts[:, 2])
    bad = np.nonzero(np.abs(p) > tol)[0]
    for i in bad:
        pts[i] = _bisect_to_surface(np.asarray(points[i], float), geom, h, tol)
    dist = np.linalg.norm(pts - np.asarray(points, float), axis=1)
    if (dist > 2.0 * h).any():
        worst = int(np.argmax(dist))
        raise ProjectionError(
            f"projection moved node {points[worst]} by {dist[worst]:.3e} > 2h"
        )
    return pts


def _bisect_to_surface(x0, geom, h, tol, max_iter=200):
    gx, gy, gz = geom.grad_phi(*x0)
    g = np.array([gx, gy, gz], dtype=float)
    norm = np.linalg.norm(g)
    if norm == 0:
        raise ProjectionError(f"vanishing gradient at {x0}")
    d = -np.sign(geom.phi(*x0)) * g / norm
    p0 = geom.phi(*x0)
    hi = None
    for t in np.linspace(0.1 * h, 3.0 * h, 30):
        if geom.phi(*(x0 + t * d)) * p0 <= 0:
            hi = t
            break
    if hi is None:
        raise ProjectionError(f"no sign change along gradient from {x0}")
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        pm = geom.phi(*(x0 + mid * d))
        if abs(pm) <= tol:
            return x0 + mid * d
        if pm * p0 > 0:
            lo = mid
        else:
            hi = mid
    raise ProjectionError(f"bisection stalled from {x0}")


def closest_point_projection(x, geom: LevelSetGeometry, h: float) -> np.ndarray:
    """Single-point convenience wrapper around project_points."""
    return project_points(np.asarray(x, float)[None, :], geom, h)[0]


@dataclass
class BoundaryCollocation:
    """One surface point per gamma- node, aligned with the gamma- ordering."""

    points: np.ndarray  # (|gamma-|, 3) coordinates on Gamma

    @property
    def count(self) -> int:
        return len(self.points)


_EDGE_DIRECTIONS = np.array(
    [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)],
    dtype=np.int64,
)


def build_collocation(
    cls: GridClassification,
    geom: LevelSetGeometry,
    mode: str = "edge",
) -> BoundaryCollocation:
    """One surface point per gamma- node.

    mode="edge" (default): the zero crossing of phi along the grid edge from
    the gamma- node to its first interior 6-neighbor (fixed direction order).
    Such a point lies on an edge whose endpoints are a gamma-/gamma+ pair, so
    its trilinear hat support is entirely inside gamma and the collocation
    rows carry exactly two weights summing to one.

    mode="project": closest-point projection of the node coordinates along
    grad(phi).  Mid-cell points can have hat corners outside gamma (those
    weights are dropped by the closure), which degrades the boundary
    equations; kept for experiments.
    """
    if mode == "project":
        points = project_points(cls.node_coords(cls.gamma_minus), geom, cls.box.h)
    elif mode == "edge":
        points = _edge_crossings(cls, geom)
    else:
        raise ValueError(f"unknown collocation mode {mode!r}")
    # duplicate detection within 1e-10*h: sort lexicographically, compare runs
    if len(points) > 1:
        order = np.lexsort(points.T[::-1])
        diffs = np.linalg.norm(np.diff(points[order], axis=0), axis=1)
        n_dup = int((diffs < 1e-10 * cls.box.h).sum())
        if n_dup:
            warnings.warn(
                f"{n_dup} near-duplicate collocation point(s); "
                "boundary system may be rank-deficient"
            )
    return BoundaryCollocation(points=points)


def _edge_crossings(cls: GridClassification, geom: LevelSetGeometry) -> np.ndarray:
    """Zero crossing of phi on a stencil edge of each gamma- node.

    Among the edges leading to interior neighbors, the crossing farthest from
    both endpoints wins (max of min(t, 1-t)); clustered crossings near shared
    gamma+ corners would otherwise produce nearly duplicate collocation rows.
    """
    nodes = cls.gamma_minus
    n = len(nodes)
    N = cls.box.N
    a = cls.node_coords(nodes)
    phi_a = geom.phi(a[:, 0], a[:, 1], a[:, 2])
    best_balance = np.full(n, -np.inf)
    best_pts = np.zeros((n, 3))
    found = np.zeros(n, dtype=bool)
    for d in _EDGE_DIRECTIONS:
        q = nodes + d
        valid = (q >= 0).all(axis=1) & (q < N).all(axis=1)
        qc = np.clip(q, 0, N - 1)
        valid &= cls.inside[qc[:, 0], qc[:, 1], qc[:, 2]]
        if not valid.any():
            continue
        b = cls.node_coords(q)
        # bisection along the edges; phi changes sign between the endpoints
        lo = np.zeros(n)
        hi = np.ones(n)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            x = a + mid[:, None] * (b - a)
            pm = geom.phi(x[:, 0], x[:, 1], x[:, 2])
            same = pm * phi_a > 0
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        t = 0.5 * (lo + hi)
        balance = np.where(valid, np.minimum(t, 1.0 - t), -np.inf)
        take = balance > best_balance
        best_balance = np.where(take, balance, best_balance)
        best_pts = np.where(take[:, None], a + t[:, None] * (b - a), best_pts)
        found |= valid
    if not found.all():
        raise ProjectionError(
            f"{int((~found).sum())} gamma- node(s) have no interior 6-neighbor"
        )
    resid = np.abs(geom.phi(best_pts[:, 0], best_pts[:, 1], best_pts[:, 2]))
    if resid.max() > 1e-12 * geom.scale:
        raise ProjectionError(
            f"edge crossing left |phi| = {resid.max():.2e} on some point"
        )
    return best_pts
