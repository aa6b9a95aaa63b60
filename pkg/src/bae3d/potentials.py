"""Matrix-free discrete layer operators built from the Green's function table.

Every operator here is a dense map between gamma vectors, applied without
materializing the matrix.  A source column is a small weighted set of lattice
sites; the target value is sum_s w_s G(m - s):

  single layer   S(m,n) = G(m-n)                    (one site, weight 1)
  double layer   D(m,n) = |D_n| G(m-n) - sum_{k in D_n} G(m-k),
                 D_n = the 6-neighbors of n outside N+
  direct columns of the boundary projection: the 7-point stencil of a unit
                 density at p*, masked to M-, with weights (6+sigma, -1,...)

Targets and sources are gamma+ / gamma- index lists from the classification;
the kernels run over a dense octant cube of table values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ExtentError
from .geometry import GridClassification
from .lattice_ops import BoundaryDensity
from .lgf import LgfTable, lookup

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

DENSE_GUARD = 20_000

_NEIGHBOR_OFFSETS = np.array(
    [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)],
    dtype=np.int64,
)


@dataclass
class OutsideNeighborSets:
    """Per gamma- node, its 6-neighbors outside N+ (flattened ragged arrays)."""

    counts: np.ndarray  # (|gamma-|,)
    nodes: np.ndarray  # (sum counts, 3)
    starts: np.ndarray  # (|gamma-|+1,)

    def of(self, i: int) -> np.ndarray:
        return self.nodes[self.starts[i] : self.starts[i + 1]]


def outside_neighbor_sets(cls: GridClassification) -> OutsideNeighborSets:
    counts = np.zeros(cls.n_minus, dtype=np.int64)
    chunks = []
    for i, n in enumerate(cls.gamma_minus):
        outs = [
            n + d for d in _NEIGHBOR_OFFSETS if not cls.in_n_plus(tuple(n + d))
        ]
        counts[i] = len(outs)
        if outs:
            chunks.append(np.array(outs, dtype=np.int64))
    if (counts == 0).any():
        warnings.warn(
            f"{int((counts == 0).sum())} gamma- node(s) have no neighbor "
            "outside N+; their double-layer columns are identically zero"
        )
    nodes = (
        np.concatenate(chunks) if chunks else np.empty((0, 3), dtype=np.int64)
    )
    starts = np.zeros(cls.n_minus + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return OutsideNeighborSets(counts=counts, nodes=nodes, starts=starts)


def single_kernel(m, n, table: LgfTable) -> float:
    """S(m,n) = G at offset m-n; no singularity at m = n."""
    m = np.asarray(m, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    return lookup(table, tuple(m - n))


def double_kernel(
    m, n_index: int, cls: GridClassification, sets: OutsideNeighborSets, table: LgfTable
) -> float:
    """D(m, n) for the n_index-th gamma- source node."""
    m = np.asarray(m, dtype=np.int64)
    n = cls.gamma_minus[n_index]
    val = sets.counts[n_index] * lookup(table, tuple(m - n))
    for k in sets.of(n_index):
        val -= lookup(table, tuple(m - k))
    return float(val)


# ---------------------------------------------------------------------------
# weighted-site source representation and the shared apply kernel
# ---------------------------------------------------------------------------

@dataclass
class _SourceSites:
    sites: np.ndarray  # (total, 3) int64 lattice nodes
    weights: np.ndarray  # (total,) float64
    starts: np.ndarray  # (n_sources+1,) int64


def _single_sites(cls: GridClassification) -> _SourceSites:
    n = cls.n_minus
    return _SourceSites(
        sites=cls.gamma_minus.astype(np.int64),
        weights=np.ones(n),
        starts=np.arange(n + 1, dtype=np.int64),
    )


def _double_sites(cls: GridClassification, sets: OutsideNeighborSets) -> _SourceSites:
    n = cls.n_minus
    total = n + int(sets.counts.sum())
    sites = np.empty((total, 3), dtype=np.int64)
    weights = np.empty(total)
    starts = np.zeros(n + 1, dtype=np.int64)
    pos = 0
    for i in range(n):
        sites[pos] = cls.gamma_minus[i]
        weights[pos] = float(sets.counts[i])
        pos += 1
        block = sets.of(i)
        sites[pos : pos + len(block)] = block
        weights[pos : pos + len(block)] = -1.0
        pos += len(block)
        starts[i + 1] = pos
    return _SourceSites(sites=sites, weights=weights, starts=starts)


def _direct_sites(
    nodes: np.ndarray, cls: GridClassification, sigma_eff: float
) -> _SourceSites:
    """Masked 7-point stencils of unit densities at the given gamma nodes.

    chi_{M-} L_h delta_p with the h=1 stencil: weight 6+sigma_eff at p and -1
    at each neighbor, keeping only sites in M- (outside Omega or off-grid
    sites never arise: gamma is interior to the box).
    """
    N = cls.box.N
    inside = cls.inside
    sites_list = []
    weights_list = []
    starts = np.zeros(len(nodes) + 1, dtype=np.int64)
    pos = 0
    for i, p in enumerate(nodes):
        if not inside[tuple(p)]:
            sites_list.append(p)
            weights_list.append(6.0 + sigma_eff)
            pos += 1
        for d in _NEIGHBOR_OFFSETS:
            q = p + d
            in_grid = (0 <= q).all() and (q < N).all()
            if not in_grid or not inside[tuple(q)]:
                sites_list.append(q)
                weights_list.append(-1.0)
                pos += 1
        starts[i + 1] = pos
    sites = (
        np.array(sites_list, dtype=np.int64)
        if sites_list
        else np.empty((0, 3), dtype=np.int64)
    )
    return _SourceSites(
        sites=sites, weights=np.array(weights_list), starts=starts
    )


if _HAVE_NUMBA:

    @numba.njit(parallel=True, fastmath=True, cache=True)
    def _apply_sites_numba(targets, sites, weights, starts, q, cube):
        nt = targets.shape[0]
        ns = starts.shape[0] - 1
        out = np.zeros(nt)
        for t in numba.prange(nt):
            ti, tj, tk = targets[t, 0], targets[t, 1], targets[t, 2]
            acc = 0.0
            for s in range(ns):
                qs = q[s]
                if qs == 0.0:
                    continue
                ker = 0.0
                for idx in range(starts[s], starts[s + 1]):
                    a = ti - sites[idx, 0]
                    if a < 0:
                        a = -a
                    b = tj - sites[idx, 1]
                    if b < 0:
                        b = -b
                    c = tk - sites[idx, 2]
                    if c < 0:
                        c = -c
                    ker += weights[idx] * cube[a, b, c]
                acc += qs * ker
            out[t] = acc
        return out


def _apply_sites_numpy(targets, sites, weights, starts, q, cube):
    out = np.zeros(len(targets))
    # expand per-site source amplitudes, then gather in target chunks
    src_amp = np.repeat(q, np.diff(starts)) * weights
    live = src_amp != 0.0
    s_live = sites[live]
    a_live = src_amp[live]
    chunk = max(1, 2_000_000 // max(1, len(s_live)))
    for lo in range(0, len(targets), chunk):
        t = targets[lo : lo + chunk]
        da = np.abs(t[:, None, 0] - s_live[None, :, 0])
        db = np.abs(t[:, None, 1] - s_live[None, :, 1])
        dc = np.abs(t[:, None, 2] - s_live[None, :, 2])
        out[lo : lo + chunk] = cube[da, db, dc] @ a_live
    return out


def _apply_sites(targets, src: _SourceSites, q, cube):
    if _HAVE_NUMBA:
        return _apply_sites_numba(
            targets, src.sites, src.weights, src.starts, q, cube
        )
    return _apply_sites_numpy(targets, src.sites, src.weights, src.starts, q, cube)


def _check_extent(targets, src: _SourceSites, table: LgfTable):
    if len(targets) == 0 or len(src.sites) == 0:
        return
    span = 0
    for ax in range(3):
        t_lo, t_hi = targets[:, ax].min(), targets[:, ax].max()
        s_lo, s_hi = src.sites[:, ax].min(), src.sites[:, ax].max()
        span = max(span, int(t_hi - s_lo), int(s_hi - t_lo))
    if span > table.extent:
        raise ExtentError(
            f"operator needs offsets up to {span}, table extent {table.extent}"
        )


# ---------------------------------------------------------------------------
# layer operators
# ---------------------------------------------------------------------------

KINDS = (
    "single_plus",
    "single_minus",
    "double_plus",
    "double_minus",
    "direct_pplus",
    "direct_pminus",
)


@dataclass
class LayerOperator:
    """Dense gamma-to-gamma map applied matrix-free.

    single_/double_ kinds map gamma- densities to gamma+ (plus) or gamma-
    (minus) targets; direct_pplus / direct_pminus are the gamma+-target
    column blocks of the boundary projection over gamma+ / gamma- sources.
    """

    kind: str
    table: LgfTable
    cls: GridClassification
    _sources: _SourceSites
    _targets: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self._targets), len(self._sources.starts) - 1)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return apply_layer(self, q)


def make_layer_operator(
    kind: str,
    table: LgfTable,
    cls: GridClassification,
    sets: OutsideNeighborSets | None = None,
    sigma_eff: float | None = None,
) -> LayerOperator:
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    gp = cls.gamma_plus.astype(np.int64)
    gm = cls.gamma_minus.astype(np.int64)
    if kind.startswith("single"):
        src = _single_sites(cls)
    elif kind.startswith("double"):
        src = _double_sites(cls, sets if sets is not None else outside_neighbor_sets(cls))
    else:
        if sigma_eff is None:
            raise ValueError("direct operators need sigma_eff")
        src = _direct_sites(gp if kind == "direct_pplus" else gm, cls, sigma_eff)
    targets = gm if kind.endswith("minus") and kind.startswith(("single", "double")) else gp
    op = LayerOperator(kind=kind, table=table, cls=cls, _sources=src, _targets=targets)
    _check_extent(op._targets, src, table)
    return op


def apply_layer(op: LayerOperator, q: np.ndarray) -> np.ndarray:
    """Dense matvec without materializing the matrix."""
    q = np.asarray(q, dtype=np.float64)
    n_src = op.shape[1]
    if q.shape != (n_src,):
        raise ValueError(f"density has shape {q.shape}, expected ({n_src},)")
    return _apply_sites(op._targets, op._sources, q, op.table.cube())


def assemble_dense(op: LayerOperator) -> np.ndarray:
    """Explicit matrix for spectral studies; guarded against large gamma."""
    nt, ns = op.shape
    if max(nt, ns) > DENSE_GUARD:
        raise MemoryError(
            f"dense assembly of {nt}x{ns} exceeds the |gamma| <= {DENSE_GUARD} guard"
        )
    cube = op.table.cube()
    src = op._sources
    cols = []
    for sidx in range(ns):
        lo, hi = src.starts[sidx], src.starts[sidx + 1]
        t = op._targets
        da = np.abs(t[:, None, 0] - src.sites[None, lo:hi, 0])
        db = np.abs(t[:, None, 1] - src.sites[None, lo:hi, 1])
        dc = np.abs(t[:, None, 2] - src.sites[None, lo:hi, 2])
        cols.append(cube[da, db, dc] @ src.weights[lo:hi])
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# direct (projection-based) formulation pieces
# ---------------------------------------------------------------------------

def direct_potential_column(
    p_star,
    cls: GridClassification,
    table: LgfTable,
    sigma_eff: float,
) -> np.ndarray:
    """Column of the free-space boundary projection for a unit density.

    Returns the trace over gamma (gamma+ entries first, then gamma-) of the
    lattice potential of chi_{M-} L_h delta_{p*}.
    """
    p = np.asarray(p_star, dtype=np.int64).reshape(1, 3)
    src = _direct_sites(p, cls, sigma_eff)
    targets = np.concatenate(
        [cls.gamma_plus.astype(np.int64), cls.gamma_minus.astype(np.int64)]
    )
    _check_extent(targets, src, table)
    return _apply_sites(targets, src, np.ones(1), table.cube())


def apply_direct(
    v: BoundaryDensity,
    cls: GridClassification,
    table: LgfTable,
    sigma_eff: float,
    ops: tuple[LayerOperator, LayerOperator] | None = None,
) -> np.ndarray:
    """Residual v_{gamma+} - P_{gamma+} v_gamma of the boundary equation."""
    if ops is None:
        p_plus = make_layer_operator("direct_pplus", table, cls, sigma_eff=sigma_eff)
        p_minus = make_layer_operator("direct_pminus", table, cls, sigma_eff=sigma_eff)
    else:
        p_plus, p_minus = ops
    return v.plus - apply_layer(p_plus, v.plus) - apply_layer(p_minus, v.minus)
