"""Free-space lattice Green's functions of the 7-point operator.

The lattice Green's function G_sigma(j,k,l) is the decaying solution of

    (6 + sigma) G(n) - sum_{i} [G(n+e_i) + G(n-e_i)] = delta(n)

on the integer lattice Z^3 (grid spacing normalized to 1; ``sigma`` is the
dimensionless combination sigma*h^2 of the physical problem).  Equivalently

    G_sigma(j,k,l) = (2pi)^-3 * int_[-pi,pi]^3
        cos(j t1) cos(k t2) cos(l t3) / (6 + sigma - 2(cos t1 + cos t2 + cos t3)) dt

For sigma = 0 this is the classical simple-cubic Watson integral; we evaluate
it through the modified-Bessel representation

    G_0(j,k,l) = int_0^inf exp(-6t) I_j(2t) I_k(2t) I_l(2t) dt

split at T* into an adaptive quadrature and an analytic large-argument tail,
switching to a far-field algebraic expansion for large offsets.  For sigma > 0
the triple integral is evaluated by the trapezoid rule (an inverse DFT of the
reciprocal symbol), which is spectrally accurate for periodic integrands.

G is invariant under the 48 sign flips and permutations of (j,k,l), so tables
store only the canonical octant j >= k >= l >= 0.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special

from .errors import ExtentError, QuadratureError

# Exact value of G_0(0,0,0): sqrt(6)/(192 pi^3) * Gamma(1/24) Gamma(5/24)
# Gamma(7/24) Gamma(11/24).  (Watson's simple-cubic integral divided by 6.)
G0_ORIGIN = float(
    math.sqrt(6.0)
    / (192.0 * math.pi**3)
    * special.gamma(1.0 / 24.0)
    * special.gamma(5.0 / 24.0)
    * special.gamma(7.0 / 24.0)
    * special.gamma(11.0 / 24.0)
)

_CACHE_MAGIC = b"LGF3"
_CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIdI32s")


def canonical_offset(j: int, k: int, l: int) -> tuple[int, int, int]:
    """Sorted-descending absolute values: the symmetry-class representative."""
    a, b, c = sorted((abs(int(j)), abs(int(k)), abs(int(l))), reverse=True)
    return a, b, c


def tetrahedral_index(a: int, b: int, c: int) -> int:
    """Flat index of canonical triple a >= b >= c >= 0."""
    return a * (a + 1) * (a + 2) // 6 + b * (b + 1) // 2 + c


def n_canonical_entries(extent: int) -> int:
    return (extent + 1) * (extent + 2) * (extent + 3) // 6


def canonical_triples(extent: int) -> np.ndarray:
    """All canonical triples with a <= extent, in tetrahedral-index order."""
    out = np.empty((n_canonical_entries(extent), 3), dtype=np.int64)
    i = 0
    for a in range(extent + 1):
        for b in range(a + 1):
            for c in range(b + 1):
                out[i] = (a, b, c)
                i += 1
    return out


@dataclass(frozen=True)
class LgfEvalConfig:
    """Knobs for Green's-function evaluation.

    t_star        base split point of the Bessel integral; inflated per offset
                  to 8*max(|j|,|k|,|l|)^2 so the 4-term tail expansion stays
                  inside its region of validity
    quad_tol      absolute tolerance for quadrature / trapezoid verification
    asym_radius   |n| beyond which the far-field expansion replaces quadrature
    asym_terms    number of far-field expansion terms (2 or 3)
    trapezoid_size  Fourier grid per dimension for sigma > 0; None = automatic
    """

    t_star: float = 40.0
    quad_tol: float = 1e-9
    asym_radius: int = 30
    asym_terms: int = 3
    trapezoid_size: int | None = None

    def __post_init__(self):
        if self.t_star <= 0:
            raise ValueError("t_star must be positive")
        if self.asym_terms not in (2, 3):
            raise ValueError("asym_terms must be 2 or 3")
        if self.asym_radius < 1:
            raise ValueError("asym_radius must be positive")
        if self.trapezoid_size is not None and (
            self.trapezoid_size < 2 or self.trapezoid_size % 2
        ):
            raise ValueError("trapezoid_size must be a positive even integer")

    def digest(self) -> bytes:
        key = "|".join(
            repr(v)
            for v in (
                self.t_star,
                self.quad_tol,
                self.asym_radius,
                self.asym_terms,
                self.trapezoid_size,
            )
        )
        return hashlib.sha256(key.encode()).digest()


@dataclass
class LgfTable:
    """Symmetry-reduced table of G_sigma on the canonical octant.

    ``values`` is a flat float64 array in tetrahedral-index order; any offset
    with max coordinate <= extent is served through ``lookup``.
    """

    sigma: float
    extent: int
    values: np.ndarray
    _cube: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        expect = n_canonical_entries(self.extent)
        if self.values.shape != (expect,):
            raise ValueError(
                f"table has {self.values.shape} values, expected ({expect},)"
            )

    def cube(self) -> np.ndarray:
        """Dense (E+1)^3 octant array, cube[|j|,|k|,|l|] = G(j,k,l).

        Built lazily; used by the matrix-free kernels for O(1) unsorted lookup.
        """
        if self._cube is None:
            e1 = self.extent + 1
            idx = np.indices((e1, e1, e1))
            srt = np.sort(idx.reshape(3, -1), axis=0)[::-1]
            a, b, c = srt[0], srt[1], srt[2]
            flat = a * (a + 1) * (a + 2) // 6 + b * (b + 1) // 2 + c
            self._cube = self.values[flat].reshape(e1, e1, e1)
        return self._cube


def lookup(table: LgfTable, offset) -> float:
    """G at an arbitrary offset, resolved through the canonical octant."""
    a, b, c = canonical_offset(*offset)
    if a > table.extent:
        raise ExtentError(
            f"offset {tuple(offset)} outside table extent {table.extent}"
        )
    return float(table.values[tetrahedral_index(a, b, c)])


# ---------------------------------------------------------------------------
# sigma = 0: Bessel integral with asymptotic tail
# ---------------------------------------------------------------------------

_TAIL_ORDERS = 7  # series orders 0..6 of the product expansion


def _single_bessel_series(n: int) -> np.ndarray:
    # Large-argument expansion I_n(2t) e^{-2t} sqrt(4 pi t) ~ sum_k a_k / t^k:
    # a_k = (-1)^k prod_{m=1..k} (mu - (2m-1)^2) / (k! 16^k), mu = 4n^2.
    mu = 4.0 * n * n
    a = np.empty(_TAIL_ORDERS)
    a[0] = 1.0
    for kk in range(1, _TAIL_ORDERS):
        a[kk] = -a[kk - 1] * (mu - (2 * kk - 1) ** 2) / (16.0 * kk)
    return a


def _bessel_tail(j: int, k: int, l: int, t_split: float) -> float:
    # int_T^inf (4 pi t)^{-3/2} sum_k c_k / t^k dt termwise, where the c_k are
    # the product of the three single-Bessel series, truncated.
    c = np.convolve(
        np.convolve(_single_bessel_series(j), _single_bessel_series(k)),
        _single_bessel_series(l),
    )[:_TAIL_ORDERS]
    powers = t_split ** -(np.arange(_TAIL_ORDERS) + 0.5)
    weights = 2.0 / (2.0 * np.arange(_TAIL_ORDERS) + 1.0)
    return (4.0 * math.pi) ** -1.5 * float(np.dot(c * weights, powers))


_BESSEL_MEMO: dict = {}


def eval_sigma0_bessel(offset, cfg: LgfEvalConfig = LgfEvalConfig()) -> float:
    """G_0 at one offset via the scaled Bessel-product integral.

    The integrand exp(-6t) I_j I_k I_l(2t) is computed with exponentially
    scaled Bessel functions (no overflow); the finite part runs to an offset-
    dependent split point and the remainder uses the analytic tail.  Values
    are memoized per (offset, quadrature knobs) within the process.
    """
    j, k, l = canonical_offset(*offset)
    memo_key = (j, k, l, cfg.t_star, cfg.quad_tol)
    hit = _BESSEL_MEMO.get(memo_key)
    if hit is not None:
        return hit
    t_split = max(cfg.t_star, 8.0 * j * j)

    def integrand(t):
        return special.ive(j, 2 * t) * special.ive(k, 2 * t) * special.ive(l, 2 * t)

    # Hint the bump location: the integrand peaks near |n|^2/6.
    peak = (j * j + k * k + l * l) / 6.0
    pts = sorted({p for p in (0.5 * j, float(j), peak, 0.5 * t_split) if 0 < p < t_split})
    finite, abserr, info = integrate.quad(
        integrand,
        0.0,
        t_split,
        epsabs=max(0.1 * cfg.quad_tol, 1e-13),
        epsrel=1e-13,
        limit=400,
        points=pts or None,
        full_output=True,
    )[:3]
    if abserr > cfg.quad_tol:
        raise QuadratureError(
            f"G_0{tuple(offset)}: quadrature error estimate {abserr:.2e} "
            f"exceeds tolerance {cfg.quad_tol:.2e}"
        )
    val = finite + _bessel_tail(j, k, l, t_split)
    _BESSEL_MEMO[memo_key] = val
    return val


def eval_sigma0_asymptotic(offset, q: int) -> float:
    """Far-field expansion A_G^q of G_0, q in {2, 3}; error O(|n|^{-2q-1}).

    Signs and the q=3 mixed-term coefficient follow the defining identity
    (cross-checked against the Bessel integral): the expansion starts at
    +1/(4 pi |n|), matching the decay of the continuum fundamental solution.
    """
    if q not in (2, 3):
        raise ValueError("q must be 2 or 3")
    j, k, l = (abs(int(v)) for v in offset)
    if j == k == l == 0:
        raise ValueError("far-field expansion undefined at the origin")
    arr = np.array([[j, k, l]], dtype=np.float64)
    return float(_asymptotic_batch(arr, q)[0])


def _asymptotic_batch(offsets: np.ndarray, q: int) -> np.ndarray:
    """Vectorized A_G^q over an (n,3) array of offsets (none at the origin)."""
    o = np.asarray(offsets, dtype=np.float64)
    j2, k2, l2 = o[:, 0] ** 2, o[:, 1] ** 2, o[:, 2] ** 2
    n2 = j2 + k2 + l2
    n1 = np.sqrt(n2)
    val = 1.0 / (4.0 * np.pi * n1) + (
        j2 * j2 + k2 * k2 + l2 * l2 - 3.0 * (j2 * k2 + j2 * l2 + k2 * l2)
    ) / (16.0 * np.pi * n1**7)
    if q == 3:
        p8 = j2**4 + k2**4 + l2**4
        p62 = (
            j2**3 * (k2 + l2) + k2**3 * (j2 + l2) + l2**3 * (j2 + k2)
        )
        p44 = j2**2 * k2**2 + k2**2 * l2**2 + j2**2 * l2**2
        p422 = j2 * k2 * l2 * n2
        val = val + (23.0 * p8 - 244.0 * p62 + 621.0 * p44 - 228.0 * p422) / (
            128.0 * np.pi * n1**13
        )
    return val


def build_table_sigma0(
    extent: int,
    cfg: LgfEvalConfig = LgfEvalConfig(),
    cache_dir: str | None = None,
) -> LgfTable:
    """Tabulate G_0 on the canonical octant up to ``extent``.

    Offsets with |n| < asym_radius go through the Bessel integral, the rest
    through the far-field expansion.  With a cache directory the table is
    persisted and reloaded bit-identically.
    """
    if extent < 1:
        raise ValueError("extent must be >= 1")
    path = _cache_path(cache_dir, 0.0, extent, cfg)
    if path is not None and os.path.exists(path):
        cached = _try_load(path, 0.0, extent, cfg)
        if cached is not None:
            return cached

    triples = canonical_triples(extent)
    r2 = (triples**2).sum(axis=1)
    near = r2 < cfg.asym_radius**2
    values = np.empty(len(triples), dtype=np.float64)
    for i in np.nonzero(near)[0]:
        values[i] = eval_sigma0_bessel(tuple(triples[i]), cfg)
    far = ~near
    if far.any():
        values[far] = _asymptotic_batch(triples[far], cfg.asym_terms)

    table = LgfTable(sigma=0.0, extent=extent, values=values)
    if path is not None:
        save_table(table, cfg, path)
    return table


# ---------------------------------------------------------------------------
# sigma > 0: trapezoid rule / inverse DFT of the reciprocal symbol
# ---------------------------------------------------------------------------

def decay_rate(sigma: float) -> float:
    """Axis decay exponent alpha of G_sigma(n) ~ e^{-alpha |n|} (1D bound)."""
    return math.acosh(1.0 + 0.5 * sigma)

def _auto_trapezoid_size(sigma: float, extent: int) -> int:
    # Periodization error goes like e^{-alpha (N_t - extent)}; push it below
    # 1e-14 with a safety margin, never below the 4*extent baseline.
    alpha = decay_rate(sigma)
    need = extent + int(math.ceil(34.0 / alpha))
    size = max(64, 4 * extent, need)
    return size + (size % 2)


def _trapezoid_octant(sigma: float, extent: int, n_t: int) -> np.ndarray:
    """Inverse-DFT the symbol 1/(6+sigma-2 sum cos) onto the [0,extent]^3 block.

    Runs slab-by-slab over the first frequency axis (folded by evenness) so
    peak memory stays at O(n_t^2) + the output block.
    """
    e1 = extent + 1
    theta = 2.0 * np.pi * np.arange(n_t) / n_t
    cosv = np.cos(theta)
    base = 6.0 + sigma
    out = np.zeros((e1, e1, e1), dtype=np.float64)
    jj = np.arange(e1)
    half = n_t // 2
    for p in range(half + 1):
        weight = 1.0 if p in (0, half) else 2.0
        sym = base - 2.0 * (cosv[p] + cosv[:, None] + cosv[None, :])
        slab = np.fft.ifft2(1.0 / sym)[:e1, :e1]
        imag = np.abs(slab.imag).max()
        if imag > 1e-13:
            raise QuadratureError(
                f"trapezoid slab p={p}: imaginary residue {imag:.2e}"
            )
        out += np.multiply.outer(weight * np.cos(theta[p] * jj), slab.real)
    return out / n_t


def _trapezoid_probe(sigma: float, offset, n_t: int) -> float:
    """Direct trapezoid sum at one offset (verification path, O(n_t^3))."""
    theta = 2.0 * np.pi * np.arange(n_t) / n_t
    cosv = np.cos(theta)
    j, k, l = offset
    ck = np.cos(k * theta)
    cl = np.cos(l * theta)
    acc = 0.0
    for p in range(n_t):
        sym = (6.0 + sigma - 2.0 * cosv[p]) - 2.0 * (cosv[:, None] + cosv[None, :])
        acc += math.cos(j * theta[p]) * (ck @ (1.0 / sym) @ cl)
    return acc / n_t**3


def eval_sigma_positive_table(
    sigma: float,
    extent: int,
    cfg: LgfEvalConfig = LgfEvalConfig(),
    cache_dir: str | None = None,
    verify: bool = True,
) -> LgfTable:
    """Tabulate G_sigma (sigma > 0) on the canonical octant up to ``extent``.

    The trapezoid grid must over-resolve the lattice decay length; the result
    is verified against a doubled-resolution trapezoid sum at probe offsets
    and must be stable to within quad_tol.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive (use build_table_sigma0 for 0)")
    if extent < 1:
        raise ValueError("extent must be >= 1")
    n_t = cfg.trapezoid_size or _auto_trapezoid_size(sigma, extent)
    if n_t < 2 * extent + 2:
        raise ValueError(
            f"trapezoid_size {n_t} < 2*extent+2 = {2 * extent + 2}"
        )
    resolved = replace(cfg, trapezoid_size=n_t)
    path = _cache_path(cache_dir, sigma, extent, resolved)
    if path is not None and os.path.exists(path):
        cached = _try_load(path, sigma, extent, resolved)
        if cached is not None:
            return cached

    octant = _trapezoid_octant(sigma, extent, n_t)
    triples = canonical_triples(extent)
    values = octant[triples[:, 0], triples[:, 1], triples[:, 2]]
    table = LgfTable(sigma=sigma, extent=extent, values=values)

    if verify:
        probes = [(0, 0, 0), (min(extent, 1), 0, 0), (min(extent, 2), min(extent, 1), 0)]
        for off in dict.fromkeys(probes):
            ref = _trapezoid_probe(sigma, off, 2 * n_t)
            drift = abs(lookup(table, off) - ref)
            if drift > cfg.quad_tol:
                raise QuadratureError(
                    f"G_{sigma}{off}: doubling the trapezoid grid moved the "
                    f"value by {drift:.2e} > {cfg.quad_tol:.2e}; "
                    f"trapezoid_size {n_t} is insufficient"
                )

    if path is not None:
        save_table(table, resolved, path)
    return table


# ---------------------------------------------------------------------------
# binary cache
# ---------------------------------------------------------------------------

def save_table(table: LgfTable, cfg: LgfEvalConfig, path: str) -> None:
    """Write header + float64 entries (tetrahedral order, little-endian)."""
    header = _HEADER.pack(
        _CACHE_MAGIC, _CACHE_VERSION, table.sigma, table.extent, cfg.digest()
    )
    payload = np.ascontiguousarray(table.values, dtype="<f8").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_table(path: str) -> LgfTable:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, sigma, extent, _digest = _HEADER.unpack_from(raw)
    if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
        raise ValueError(f"{path}: bad magic or version")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).copy()
    if values.shape[0] != n_canonical_entries(extent):
        raise ValueError(f"{path}: payload size mismatch")
    return LgfTable(sigma=sigma, extent=extent, values=values)


def _cache_path(
    cache_dir: str | None, sigma: float, extent: int, cfg: LgfEvalConfig
) -> str | None:
    if cache_dir is None:
        return None
    os.makedirs(cache_dir, exist_ok=True)
    tag = cfg.digest().hex()[:12]
    return os.path.join(cache_dir, f"lgf_s{sigma:.12g}_e{extent}_{tag}.bin")


def _try_load(
    path: str, sigma: float, extent: int, cfg: LgfEvalConfig
) -> LgfTable | None:
    try:
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
        magic, version, s, e, digest = _HEADER.unpack_from(head)
        if (
            magic != _CACHE_MAGIC
            or version != _CACHE_VERSION
            or s != sigma
            or e != extent
            or digest != cfg.digest()
        ):
            return None
        return load_table(path)
    except (OSError, ValueError, struct.error) as exc:
        warnings.warn(f"ignoring corrupt LGF cache {path}: {exc}; recomputing")
        return None
