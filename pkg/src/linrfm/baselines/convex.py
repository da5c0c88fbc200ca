"""Convex recovery baselines: basis pursuit and nuclear-norm completion.

Both are first-order splitting methods with an exact projection onto the
affine constraint set, so every returned estimate is feasible to rounding.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import DegenerateInput, NonConvergence
from ..problems import CompletionProblem


#: Residual balancing runs only this long; a penalty that keeps changing can
#: stall ADMM well short of the tolerance.
RHO_ADAPT_ITERS = 500
CERTIFY_EVERY = 20


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


class _AffineProjector:
    """Projection onto ``{w : X w = y}`` (least-squares solutions if inconsistent).

    Uses a thin SVD of ``X``, so dependent rows and ``n >= d`` are handled.
    """

    def __init__(self, X, y):
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        if s.size == 0 or s[0] == 0:
            raise DegenerateInput("design matrix is zero")
        keep = s > s[0] * max(X.shape) * np.finfo(float).eps
        self.V = Vt[keep].T
        self.pinv = (Vt[keep].T / s[keep]) @ U[:, keep].T
        self.w0 = self.pinv @ y

    def __call__(self, v):
        return v - self.V @ (self.V.T @ v) + self.w0


def l1_min(problem, tol=1e-8, max_iters=100_000, rho=1.0, return_info=False):
    """Basis pursuit ``min ||w||_1 s.t. X w = y`` by ADMM.

    The splitting is ``w`` (affine set, exact projection) against ``z``
    (soft-thresholding) with ``w = z``; the penalty adapts by residual
    balancing during the first :data:`RHO_ADAPT_ITERS` iterations and is
    then frozen.

    Parameters
    ----------
    problem : SparseRegressionProblem
    tol : float
        Stop once both scaled residuals ``||w - z|| / max(1, ||z||)`` and
        ``rho ||z - z_prev|| / max(1, ||rho u||)`` are below ``tol``, or
        earlier once a polished support solution has a certified relative
        duality gap below ``tol`` (checked every :data:`CERTIFY_EVERY`
        iterations).  The dual point is the scaled multiplier ``rho u``
        projected onto the row space of ``X`` and shrunk into the unit
        ``l_inf`` ball.

    Returns
    -------
    w : (d,) ndarray
        Feasible iterate; with ``return_info`` a dict with ``iters`` and residuals.

    Raises
    ------
    NonConvergence
        After ``max_iters``; the exception carries the last ``estimate``.
    """
    X, y = problem.design, problem.labels
    n, d = X.shape
    if n == 0:
        w = np.zeros(d)
        return (w, {"iters": 0}) if return_info else w
    proj = _AffineProjector(X, y)
    z = proj(np.zeros(d))
    u = np.zeros(d)
    w = z
    for it in range(1, max_iters + 1):
        w = proj(z - u)
        z_prev = z
        z = soft_threshold(w + u, 1.0 / rho)
        u = u + w - z
        r = np.linalg.norm(w - z) / max(1.0, np.linalg.norm(z))
        s = rho * np.linalg.norm(z - z_prev) / max(1.0, rho * np.linalg.norm(u))
        if r < tol and s < tol:
            w, polished = _polish(X, y, w, z)
            info = {"iters": it, "primal": r, "dual": s, "polished": polished}
            return (w, info) if return_info else w
        if it % CERTIFY_EVERY == 0:
            cand, ok = _polish(X, y, w, z)
            if ok:
                gap = _duality_gap(proj, cand, rho * u)
                if gap < tol * max(1.0, np.abs(cand).sum()):
                    info = {"iters": it, "primal": r, "dual": s, "polished": True, "gap": gap}
                    return (cand, info) if return_info else cand
        if it % 10 == 0 and it <= RHO_ADAPT_ITERS:
            if r > 10 * s:
                rho *= 2.0
                u /= 2.0
            elif s > 10 * r:
                rho /= 2.0
                u *= 2.0
    err = NonConvergence(f"l1_min did not reach tol {tol:g} in {max_iters} iterations")
    err.estimate = w
    raise err


def _duality_gap(proj, w, lam):
    """``||w||_1 - <nu, y>`` for the dual point built from ``lam`` (``w`` feasible)."""
    lam = proj.V @ (proj.V.T @ lam)
    scale = max(1.0, np.abs(lam).max())
    # X^T nu = lam / scale, so <nu, y> = <nu, X w> = <lam, w> / scale
    return float(np.abs(w).sum() - lam @ w / scale)


def _polish(X, y, w, z):
    """Re-solve on the support of ``z``; keep it if feasible with no larger l1 norm."""
    support = np.flatnonzero(z)
    if support.size == 0 or support.size > X.shape[0]:
        return w, False
    sol, *_ = np.linalg.lstsq(X[:, support], y, rcond=None)
    cand = np.zeros_like(w)
    cand[support] = sol
    scale = max(1.0, np.linalg.norm(y))
    if np.linalg.norm(X @ cand - y) > 1e-10 * scale or np.abs(cand).sum() > np.abs(w).sum():
        return w, False
    return cand, True


def svt(A, tau):
    """Singular-value soft-thresholding, the prox of ``tau ||.||_*``."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def nuclear_norm(A):
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def nuclear_norm_min(problem, tol=1e-7, max_iters=50_000, tau=None, return_info=False):
    """``min ||Z||_* s.t. Z_ij = Y_ij`` on the observed set, by Douglas-Rachford.

    Iterates ``X = P(V)``, ``S = svt(2X - V, tau)``, ``V <- V + S - X`` where
    ``P`` re-imposes the observed entries.

    Parameters
    ----------
    problem : CompletionProblem
    tol : float
        Stop when ``||S - X||_F / max(1, ||X||_F) < tol``.
    tau : float, optional
        Prox step; defaults to ``0.05`` times the RMS of the observed values.

    Raises
    ------
    NonConvergence
        After ``max_iters``; the exception carries the last feasible ``estimate``.
    """
    if not isinstance(problem, CompletionProblem):
        raise TypeError("nuclear_norm_min expects a CompletionProblem")
    rows, cols, vals = problem.rows, problem.cols, problem.values
    if tau is None:
        rms = float(np.sqrt(np.mean(vals**2))) if vals.size else 0.0
        tau = 0.05 * rms if rms > 0 else 1.0

    def project(V):
        X = V.copy()
        X[rows, cols] = vals
        return X

    V = problem.observed_matrix()
    X = project(V)
    for it in range(1, max_iters + 1):
        X = project(V)
        S = svt(2.0 * X - V, tau)
        gap = S - X
        V = V + gap
        res = np.linalg.norm(gap) / max(1.0, np.linalg.norm(X))
        if res < tol:
            X = project(V)
            info = {"iters": it, "residual": res}
            return (X, info) if return_info else X
    err = NonConvergence(f"nuclear_norm_min did not reach tol {tol:g} in {max_iters} iterations")
    err.estimate = project(V)
    raise err
