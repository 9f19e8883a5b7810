"""Smallest nonconstant eigenpair of a Neumann-type pencil (K, M).

K is symmetric positive semidefinite with the constants as its kernel, M is
symmetric positive definite.  Iterates live in the M-orthogonal complement of
the constants, where K is invertible: each step solves the bordered system

    [K   m] [x]   [M v]
    [m^T 0] [l] = [ 0 ],      m = M 1,

which is shift-invert with shift 0 restricted to the deflated space.  A small
block with Rayleigh-Ritz keeps clustered or repeated eigenvalues from stalling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Eigen-iteration or regularization failed to converge."""


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int
    second: float


def _deflate(V, m, ones_m):
    # remove the M-weighted mean of each column
    return V - np.outer(np.ones(V.shape[0]), (m @ V) / ones_m)


def smallest_nonconstant(
    K,
    M,
    start,
    tol: float = 1e-12,
    maxiter: int = 500,
    block: int = 3,
    restarts: int = 2,
) -> EigenResult:
    """Deflated block inverse iteration for the first nonzero eigenpair.

    ``start`` is a deterministic (n,) or (n, b) starting block; extra columns
    are filled with fixed polynomial-in-index vectors.  Convergence is
    declared when ``||K x - mu M x|| <= tol * mu * ||M x||`` or when the Ritz
    value stagnates at roundoff level.
    """
    K = sp.csc_matrix(K)
    M = sp.csc_matrix(M)
    n = K.shape[0]
    m = np.asarray(M @ np.ones(n)).ravel()
    ones_m = float(m.sum())
    border = sp.bmat([[K, sp.csc_matrix(m[:, None])], [sp.csc_matrix(m[None, :]), None]], format="csc")
    lu = spla.splu(border)

    start = np.asarray(start, dtype=float)
    if start.ndim == 1:
        start = start[:, None]
    t = np.linspace(-1.0, 1.0, n)
    fill = [np.cos(np.pi * (j + 2) * (t + 1) / 2) for j in range(block)]
    V = np.column_stack([start] + fill)[:, :block]
    V = _deflate(V, m, ones_m)

    def orthonormalize(V):
        G = V.T @ (M @ V)
        G = 0.5 * (G + G.T)
        w, Q = la.eigh(G)
        keep = w > w.max() * 1e-13
        return V @ (Q[:, keep] / np.sqrt(w[keep]))

    V = orthonormalize(V)
    mu_prev = np.inf
    stagnant = 0
    attempt = 0
    it = 0
    best = None
    while True:
        it += 1
        rhs = np.vstack([M @ V, np.zeros((1, V.shape[1]))])
        X = lu.solve(rhs)[:n]
        X = _deflate(X, m, ones_m)
        X = orthonormalize(X)
        A = X.T @ (K @ X)
        B = X.T @ (M @ X)
        theta, Q = la.eigh(0.5 * (A + A.T), 0.5 * (B + B.T))
        V = X @ Q
        mu = float(theta[0])
        x = V[:, 0]
        Mx = M @ x
        res = float(np.linalg.norm(K @ x - mu * Mx) / (abs(mu) * np.linalg.norm(Mx)))
        second = float(theta[1]) if len(theta) > 1 else np.nan
        if res <= tol:
            return EigenResult(mu, x, res, it, second)
        if best is None or res < 0.5 * best.residual:
            stagnant = 0
        elif abs(mu - mu_prev) <= 1e-11 * abs(mu):
            stagnant += 1
            if stagnant >= 10:
                # roundoff floor reached: the eigenpair is as good as it gets
                return best
        if best is None or res < best.residual:
            best = EigenResult(mu, x.copy(), res, it, second)
        mu_prev = mu
        if it >= maxiter:
            attempt += 1
            if attempt > restarts:
                raise SolverError(
                    f"eigen-iteration did not converge (residual {best.residual:.3e} after {it} steps)"
                )
            # restart from the best vector plus fresh fill columns
            V = orthonormalize(_deflate(np.column_stack([best.vector] + fill[: block - 1]), m, ones_m))
            it = 0
