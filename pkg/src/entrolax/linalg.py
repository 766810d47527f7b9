"""Dense LU with partial pivoting and unrestarted GMRES.

Every linear system in this package is dense and has at most a few hundred
unknowns, so plain O(n^3) numpy routines with full per-iteration reporting
are preferable to sparse or restarted variants.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import daxpy, ddot


class SingularMatrixError(Exception):
    """Matrix is singular to working precision."""


@dataclass(frozen=True)
class DenseFactorization:
    """Combined LU factors (unit lower / upper triangle) with row permutation.

    Satisfies P A = L U, where P is the permutation sending row i to perm[i].
    """

    lu: np.ndarray
    perm: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]


def lu_factor(a, block: int = 64) -> DenseFactorization:
    """Factor a square matrix as P A = L U with partial pivoting.

    Right-looking elimination, blocked so the trailing update runs as a
    single matrix product per panel.
    """
    lu = np.array(a, dtype=float)
    if lu.ndim != 2 or lu.shape[0] != lu.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {lu.shape}")
    n = lu.shape[0]
    scale = float(np.max(np.abs(lu)))
    if scale == 0.0:
        raise SingularMatrixError("zero matrix")
    tiny = max(n, 16) * np.finfo(float).eps * scale
    perm = np.arange(n)
    for k0 in range(0, n, block):
        k1 = min(k0 + block, n)
        # unblocked panel factorization, pivoting over the full remaining column
        for k in range(k0, k1):
            p = k + int(np.argmax(np.abs(lu[k:, k])))
            if abs(lu[p, k]) <= tiny:
                raise SingularMatrixError(f"pivot {abs(lu[p, k]):.3e} in column {k}")
            if p != k:
                lu[[k, p]] = lu[[p, k]]
                perm[[k, p]] = perm[[p, k]]
            if k + 1 < n:
                lu[k + 1:, k] /= lu[k, k]
                if k + 1 < k1:
                    lu[k + 1:, k + 1:k1] -= np.outer(lu[k + 1:, k], lu[k, k + 1:k1])
        if k1 < n:
            # finish the panel's row block: U12 = L11^{-1} A12 (unit lower solve)
            for i in range(k0 + 1, k1):
                lu[i, k1:] -= lu[i, k0:i] @ lu[k0:i, k1:]
            # trailing submatrix update with one GEMM
            lu[k1:, k1:] -= lu[k1:, k0:k1] @ lu[k0:k1, k1:]
    return DenseFactorization(lu=lu, perm=perm)


def lu_solve_factored(fac: DenseFactorization, b):
    """Solve A x = b from an existing factorization; b may have several columns."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != fac.n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {fac.n}")
    one_dim = b.ndim == 1
    x = b[fac.perm].reshape(fac.n, -1).astype(float, copy=True)
    lu = fac.lu
    n = fac.n
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x[:, 0] if one_dim else x


def lu_solve(a, b):
    """Factor and solve in one call."""
    return lu_solve_factored(lu_factor(a), b)


@dataclass
class KrylovReport:
    iterations: int
    relative_residual: float
    history: list
    converged: bool
    basis: np.ndarray | None = None


def gmres(a_action, b, x0=None, rel_tol=1e-10, max_dim=None):
    """Unrestarted GMRES with modified Gram-Schmidt and Givens rotations.

    Terminates once ||b - A x|| <= rel_tol * ||b|| or the Krylov space reaches
    max_dim. An Arnoldi breakdown means the solution lies in the current
    space and is treated as convergence. The report keeps the full residual
    history (nonincreasing by construction) and the orthonormal basis.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_dim is None:
        max_dim = n
    max_dim = min(int(max_dim), n)
    if max_dim < 1:
        raise ValueError("max_dim must be at least 1")
    if rel_tol < 0.0:
        raise ValueError("rel_tol must be nonnegative")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), KrylovReport(0, 0.0, [0.0], True, None)
    if x0 is None:
        x0 = np.zeros(n)
        r0 = b.copy()
    else:
        x0 = np.asarray(x0, dtype=float)
        r0 = b - a_action(x0)
    beta = float(np.linalg.norm(r0))
    target = rel_tol * bnorm
    history = [beta]
    if beta <= target:
        return x0.copy(), KrylovReport(0, beta / bnorm, history, True, None)

    # basis stored row-wise so the Gram-Schmidt sweeps touch contiguous memory
    v = np.zeros((max_dim + 1, n))
    h = np.zeros((max_dim + 1, max_dim))
    cs, sn = [], []
    g = [beta] + [0.0] * max_dim
    v[0] = r0 / beta
    rows = [v[0]]

    m = 0
    converged = False
    broke_down = False
    for j in range(max_dim):
        # copy: the action may return its argument (or a view), and w is
        # updated in place during orthogonalization
        w = np.array(a_action(v[j]), dtype=float)
        wnorm = float(np.sqrt(w @ w))
        col = []
        for vi in rows:
            hij = ddot(vi, w)
            col.append(hij)
            w = daxpy(vi, w, a=-hij)
        hnext = float(np.sqrt(w @ w))
        broke_down = hnext <= 1e-14 * max(wnorm, 1e-300)
        if not broke_down:
            v[j + 1] = w / hnext
            rows.append(v[j + 1])
        # apply the stored rotations (scalar scan), then a new one zeroing the subdiagonal
        for i in range(j):
            ci, si = cs[i], sn[i]
            t = ci * col[i] + si * col[i + 1]
            col[i + 1] = -si * col[i] + ci * col[i + 1]
            col[i] = t
        denom = float(np.hypot(col[j], hnext))
        if denom == 0.0:
            cj, sj = 1.0, 0.0
        else:
            cj, sj = col[j] / denom, hnext / denom
        cs.append(cj)
        sn.append(sj)
        col[j] = denom
        h[:j + 1, j] = col
        g[j + 1] = -sj * g[j]
        g[j] = cj * g[j]
        m = j + 1
        res = abs(g[j + 1])
        history.append(res)
        if res <= target or broke_down:
            converged = True
            break

    y = np.zeros(m)
    for i in range(m - 1, -1, -1):
        if h[i, i] == 0.0:
            raise SingularMatrixError("singular least-squares triangle in GMRES")
        y[i] = (g[i] - h[i, i + 1:m] @ y[i + 1:m]) / h[i, i]
    x = x0 + y @ v[:m]
    return x, KrylovReport(m, history[-1] / bnorm, history, converged, v[:m].T)
