import numpy as np
import pytest
from scipy.sparse.linalg import LinearOperator, cg


def lattice_bruteforce_lgf(offset, sigma, radius, rtol=1e-12):
    """Independent oracle: solve the defining identity on a finite cube.

    (6+sigma) G(n) - sum_i [G(n+e_i)+G(n-e_i)] = delta(n) on [-radius,radius]^3
    with Dirichlet ring data 1/(4 pi |n|) for sigma=0 (continuum far field) or
    0 for sigma>0 (exponential decay).  Conjugate gradients, matrix-free.
    """
    m = 2 * radius + 1
    ring = np.zeros((m, m, m))
    if sigma == 0.0:
        ax = np.arange(m) - radius
        xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        rr = np.sqrt((xx**2 + yy**2 + zz**2).astype(float))
        far = 1.0 / (4.0 * np.pi * np.where(rr == 0, 1.0, rr))
        ring = np.where(rr == 0, 0.0, far)
    interior = np.zeros((m, m, m), dtype=bool)
    interior[1:-1, 1:-1, 1:-1] = True
    n_int = interior.sum()

    def neighbor_sum(u):
        s = np.zeros_like(u)
        s[1:, :, :] += u[:-1, :, :]
        s[:-1, :, :] += u[1:, :, :]
        s[:, 1:, :] += u[:, :-1, :]
        s[:, :-1, :] += u[:, 1:, :]
        s[:, :, 1:] += u[:, :, :-1]
        s[:, :, :-1] += u[:, :, 1:]
        return s

    def matvec(x):
        u = np.zeros((m, m, m))
        u[interior] = x
        return ((6.0 + sigma) * u - neighbor_sum(u))[interior]

    rhs = np.zeros((m, m, m))
    rhs[radius, radius, radius] = 1.0
    bc = np.zeros((m, m, m))
    bc[~interior] = ring[~interior]
    rhs = (rhs + neighbor_sum(bc))[interior]

    op = LinearOperator((n_int, n_int), matvec=matvec, dtype=float)
    x, info = cg(op, rhs, rtol=rtol, atol=0.0, maxiter=5000)
    assert info == 0, f"oracle CG failed: info={info}"
    full = np.zeros((m, m, m))
    full[interior] = x
    full[~interior] = ring[~interior]
    j, k, l = offset
    return full[radius + j, radius + k, radius + l]


@pytest.fixture(scope="session")
def lgf_cache_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("lgf_cache"))
