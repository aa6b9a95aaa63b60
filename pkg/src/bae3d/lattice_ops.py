"""Grid-side operators: the 7-point stencil, masked extensions, hat closure.

Grid functions are plain (N,N,N) float arrays over the interior nodes of the
auxiliary box; values beyond the interior grid are zero (the homogeneous
Dirichlet walls of the auxiliary problem are baked into the stencil).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ClosureError
from .geometry import BoundaryCollocation, GridClassification


@dataclass
class BoundaryDensity:
    """Values on the grid boundary, split and ordered per the classification."""

    plus: np.ndarray
    minus: np.ndarray

    def __add__(self, other: "BoundaryDensity") -> "BoundaryDensity":
        return BoundaryDensity(self.plus + other.plus, self.minus + other.minus)


def apply_Lh(u: np.ndarray, sigma: float, h: float) -> np.ndarray:
    """(-lap_h + sigma) u with zero values outside the interior grid."""
    out = (6.0 + sigma * h * h) * u
    out[1:, :, :] -= u[:-1, :, :]
    out[:-1, :, :] -= u[1:, :, :]
    out[:, 1:, :] -= u[:, :-1, :]
    out[:, :-1, :] -= u[:, 1:, :]
    out[:, :, 1:] -= u[:, :, :-1]
    out[:, :, :-1] -= u[:, :, 1:]
    return out / (h * h)


def extend_by_zero(density: BoundaryDensity, cls: GridClassification) -> np.ndarray:
    """Grid function equal to the density on gamma and zero elsewhere."""
    w = np.zeros_like(cls.inside, dtype=np.float64)
    w[tuple(cls.gamma_plus.T)] = density.plus
    w[tuple(cls.gamma_minus.T)] = density.minus
    return w


def masked_Lh_of_extension(
    density: BoundaryDensity,
    cls: GridClassification,
    sigma: float,
    h: float,
) -> np.ndarray:
    """chi_{M-} L_h of the zero extension of a gamma density.

    This is the right-hand side whose box solve yields the difference
    potential; any other extension gives the same potential, zero extension
    keeps the support minimal (contained in M- within one stencil of gamma).
    """
    w = extend_by_zero(density, cls)
    v = apply_Lh(w, sigma, h)
    v[cls.inside] = 0.0
    return v


def trace(grid: np.ndarray, cls: GridClassification) -> BoundaryDensity:
    """Restriction of a grid function to gamma, in classification order."""
    return BoundaryDensity(
        plus=grid[tuple(cls.gamma_plus.T)].copy(),
        minus=grid[tuple(cls.gamma_minus.T)].copy(),
    )


def hat_weight(node_coord, point, h: float) -> float:
    """Trilinear hat centered at a node: support (-h,h)^3, partition of unity."""
    w = 1.0
    for nc, pc in zip(node_coord, point):
        w *= max(0.0, 1.0 - abs(pc - nc) / h)
    return w


def build_phi_matrices(
    colloc: BoundaryCollocation,
    cls: GridClassification,
    h: float,
):
    """Sparse collocation matrices (Phi+, Phi-) over (gamma+, gamma-) columns.

    Row i interpolates at collocation point i using the trilinear hat basis on
    the cell containing the point; corners that are not gamma nodes are
    dropped, so a row sums to 1 only when all eight supporting corners are
    gamma nodes.
    """
    ids = cls.gamma_ids()
    n_plus = cls.n_plus
    box = cls.box
    # index-space position: node i sits at s = i, cell corner offsets {0,1}
    s = (colloc.points - box.origin) / box.h - 1.0
    base = np.floor(s).astype(np.int64)
    frac = s - base
    rows_p, cols_p, vals_p = [], [], []
    rows_m, cols_m, vals_m = [], [], []
    for i in range(colloc.count):
        touched = False
        for dx in (0, 1):
            wx = (1.0 - frac[i, 0]) if dx == 0 else frac[i, 0]
            for dy in (0, 1):
                wy = (1.0 - frac[i, 1]) if dy == 0 else frac[i, 1]
                for dz in (0, 1):
                    wz = (1.0 - frac[i, 2]) if dz == 0 else frac[i, 2]
                    w = wx * wy * wz
                    if w == 0.0:
                        continue
                    corner = (
                        base[i, 0] + dx,
                        base[i, 1] + dy,
                        base[i, 2] + dz,
                    )
                    col = ids.get(corner)
                    if col is None:
                        continue
                    touched = True
                    if col < n_plus:
                        rows_p.append(i)
                        cols_p.append(col)
                        vals_p.append(w)
                    else:
                        rows_m.append(i)
                        cols_m.append(col - n_plus)
                        vals_m.append(w)
        if not touched:
            raise ClosureError(
                f"collocation point {colloc.points[i]} has no gamma support"
            )
    shape_p = (colloc.count, n_plus)
    shape_m = (colloc.count, cls.n_minus)
    phi_plus = sparse.csr_matrix(
        (vals_p, (rows_p, cols_p)), shape=shape_p, dtype=np.float64
    )
    phi_minus = sparse.csr_matrix(
        (vals_m, (rows_m, cols_m)), shape=shape_m, dtype=np.float64
    )
    return phi_plus, phi_minus
