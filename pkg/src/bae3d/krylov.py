"""Full (non-restarted) GMRES with per-iteration residual history.

Modified Gram-Schmidt Arnoldi with a single reorthogonalization pass when
cancellation is detected, Givens rotations for the least-squares update, zero
initial guess.  The recorded history is the Givens residual estimate, which
is nonincreasing by construction; the true residual is recomputed at exit and
must match the final estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class GmresResult:
    x: np.ndarray
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    true_residual: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def gmres(apply, b: np.ndarray, cfg: GmresConfig = GmresConfig()) -> GmresResult:
    """Solve A x = b for a square operator given as a callable.

    Returns the iterate together with the relative-residual history; a run
    that hits max_iter comes back flagged (converged=False) so the caller
    decides how to proceed.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    beta = np.linalg.norm(b)
    if beta == 0.0:
        return GmresResult(x=np.zeros(n), residuals=[0.0], converged=True)

    max_iter = min(cfg.max_iter, n)
    V = np.empty((max_iter + 1, n))
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = beta
    V[0] = b / beta

    residuals: list[float] = []
    k_final = 0
    for k in range(max_iter):
        # copy: the operator may return its input (or a view) and MGS
        # updates w in place
        w = np.array(apply(V[k]), dtype=np.float64, copy=True)
        norm_before = np.linalg.norm(w)
        for i in range(k + 1):
            H[i, k] = np.dot(V[i], w)
            w -= H[i, k] * V[i]
        norm_after = np.linalg.norm(w)
        if norm_after < 0.5 * norm_before:
            # severe cancellation: one reorthogonalization pass
            for i in range(k + 1):
                corr = np.dot(V[i], w)
                H[i, k] += corr
                w -= corr * V[i]
            norm_after = np.linalg.norm(w)
        H[k + 1, k] = norm_after

        # fold accumulated Givens rotations into the new column
        for i in range(k):
            h1 = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            h2 = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k], H[i + 1, k] = h1, h2
        r = np.hypot(H[k, k], H[k + 1, k])
        if r == 0.0:
            cs[k], sn[k] = 1.0, 0.0
        else:
            cs[k], sn[k] = H[k, k] / r, H[k + 1, k] / r
        H[k, k] = r
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]

        residuals.append(abs(g[k + 1]) / beta)
        k_final = k + 1
        if residuals[-1] <= cfg.tol or norm_after == 0.0:
            break
        V[k + 1] = w / norm_after

    # back substitution on the triangularized system
    y = np.zeros(k_final)
    for i in range(k_final - 1, -1, -1):
        y[i] = (g[i] - H[i, i + 1 : k_final] @ y[i + 1 : k_final]) / H[i, i]
    x = V[:k_final].T @ y

    true_resid = float(np.linalg.norm(b - np.asarray(apply(x))) / beta)
    return GmresResult(
        x=x,
        residuals=residuals,
        converged=true_resid <= cfg.tol,
        iterations=k_final,
        true_residual=true_resid,
    )
