"""Fast direct solver for the auxiliary box problem.

The operator (-lap_h + sigma) with zero Dirichlet walls diagonalizes in the
type-I discrete sine basis; a solve is forward DST, divide by the eigenvalues

    lam_pqr = sigma + (1/h^2) sum_i (2 - 2 cos(p_i pi / (N+1))),

inverse DST.  The transform length N+1 is a power of two on the standard
N = 2^n - 1 grids.  Each plan counts its solves so the pipeline can assert
the two-solve budget of a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .geometry import GridClassification
from .lattice_ops import BoundaryDensity, masked_Lh_of_extension


@dataclass
class SineTransformPlan:
    N: int
    h: float
    sigma: float
    lam1d: np.ndarray = field(init=False)
    solves: int = field(default=0, init=False)

    def __post_init__(self):
        p = np.arange(1, self.N + 1)
        self.lam1d = (2.0 - 2.0 * np.cos(p * np.pi / (self.N + 1))) / self.h**2

    def eigenvalues(self) -> np.ndarray:
        """Full lam_pqr grid (broadcast sum; strictly positive for sigma >= 0)."""
        l1 = self.lam1d
        return self.sigma + l1[:, None, None] + l1[None, :, None] + l1[None, None, :]


def make_plan(N: int, h: float, sigma: float) -> SineTransformPlan:
    return SineTransformPlan(N=N, h=h, sigma=sigma)


def solve_box(
    rhs: np.ndarray,
    sigma: float,
    h: float,
    plan: SineTransformPlan | None = None,
) -> np.ndarray:
    """u with (-lap_h + sigma) u = rhs and zero Dirichlet walls; O(N^3 log N)."""
    N = rhs.shape[0]
    if plan is None:
        plan = make_plan(N, h, sigma)
    assert (plan.N, plan.h, plan.sigma) == (N, h, sigma), "plan mismatch"
    coeff = fft.dstn(rhs, type=1, workers=-1)
    coeff /= plan.eigenvalues()
    plan.solves += 1
    return fft.idstn(coeff, type=1, workers=-1)


def particular_solution(
    f,
    cls: GridClassification,
    sigma: float,
    h: float,
    plan: SineTransformPlan | None = None,
) -> np.ndarray:
    """G_h[chi_{M+} f]: source sampled on M+ only, solved on the full box."""
    rhs = np.zeros_like(cls.inside, dtype=np.float64)
    if f is not None:
        coords = cls.node_coords(np.argwhere(cls.inside))
        rhs[cls.inside] = f(coords[:, 0], coords[:, 1], coords[:, 2])
    return solve_box(rhs, sigma, h, plan)


def reconstruct(
    u_gamma: BoundaryDensity,
    cls: GridClassification,
    sigma: float,
    h: float,
    plan: SineTransformPlan | None = None,
    f=None,
    particular: np.ndarray | None = None,
) -> np.ndarray:
    """Discrete generalized Green's formula on the box grid.

    u = G_h[chi_{M-} L_h u_gamma] + G_h[chi_{M+} f]; pass ``particular`` to
    reuse an existing particular solution (the pipeline computes it before
    solving the boundary system, keeping the total at two box solves).
    Values are meaningful on M+.
    """
    rhs = masked_Lh_of_extension(u_gamma, cls, sigma, h)
    pot = solve_box(rhs, sigma, h, plan)
    if particular is None:
        particular = particular_solution(f, cls, sigma, h, plan)
    return pot + particular
