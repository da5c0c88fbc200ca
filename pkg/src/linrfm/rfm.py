"""Linear recursive feature machines with SVD-based filter updates.

One iteration alternates a minimum-norm interpolation through the current
filter ``M`` with a spectral update of the filter from the gradient outer
product of the fitted predictor::

    W = argmin ||W||_F  s.t.  <A_i M, W> = y_i
    Z = W M                       (observed entries re-imposed for completion)
    M <- phi(Z^T Z)

The diagonal variant does the same coordinate-wise for sparse regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.integrate

from .exceptions import ConfigError, DivergentIntegral, NumericFailure, QuadratureFailure
from .problems import CompletionProblem, SparseRegressionProblem, test_mse
from .spectral import (
    Identity,
    SpectralFunction,
    apply_to_eig,
    eigh_desc,
    pseudo_inverse_solve,
    singular_values,
    solve_psd_gram,
    spectral_apply,
    symmetrize,
)
from .trace import Trace

TRACE_COLUMNS = ("iter", "objective", "z_change", "feasibility", "test_mse")


@dataclass(frozen=True)
class RfmConfig:
    """Iteration settings.

    Parameters
    ----------
    phi : spectral function applied to the gradient outer product.
    max_iters : iteration cap.
    tol : stop once ``||Z_t - Z_{t-1}||_F / ||Z_{t-1}||_F < tol``.
    ridge : Tikhonov term added to every interpolation Gram system.
    enforce_observed : overwrite observed entries of ``Z`` before each filter
        update (completion problems only).
    fixed_iterations : ignore ``tol`` and run exactly ``max_iters`` steps.
    record_objective : evaluate ``sum psi(sigma_j(Z))`` each iteration (one SVD).
    track_test_mse : record test MSE when ground truth is available.
    check_pd : assert the filter stays positive definite when ``phi`` is
        strictly positive (debug aid).
    """

    phi: SpectralFunction = field(default_factory=Identity)
    max_iters: int = 10_000
    tol: float = 1e-10
    ridge: float = 1e-10
    enforce_observed: bool = True
    fixed_iterations: bool = False
    record_objective: bool = True
    track_test_mse: bool = False
    check_pd: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol", f"must be > 0, got {self.tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("max_iters", f"must be a positive integer, got {self.max_iters}")
        if self.ridge < 0:
            raise ConfigError("ridge", f"must be >= 0, got {self.ridge}")


@dataclass(frozen=True, eq=False)
class RfmState:
    """Filter ``M``, the weights ``W`` fitted through it and ``Z = W M``."""

    M: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    t: int = 0
    converged: bool = False


@dataclass(frozen=True)
class FixedPointCertificate:
    multipliers: np.ndarray
    stationarity_residual: float  # relative to ||G||_F
    feasibility_residual: float
    objective_value: float
    stationarity_abs: float = 0.0


# ------------------------------------------------------------ interpolation


def _matrix_problem(problem):
    if isinstance(problem, SparseRegressionProblem):
        return problem.as_sensing()
    return problem


def _labels(problem):
    return problem.labels


def filtered_interpolate(operator, labels, F, ridge=0.0, FFt=None):
    """Minimum-norm ``W`` with ``<A_i F, W> = y_i``.

    Returns ``(W, gamma)`` where ``W = A^*(gamma) F`` and ``gamma`` solves the
    Gram system ``(G + ridge I) gamma = y`` with ``G_ij = tr(A_i^T A_j F F^T)``.
    """
    if FFt is None:
        FFt = F @ F.T
    G = operator.filtered_gram(FFt)
    gamma = solve_psd_gram(G, labels, ridge)
    return operator.adjoint(gamma) @ F, gamma


def min_frob_interpolate(problem, M, ridge=0.0):
    """Minimum-Frobenius-norm ``W`` satisfying ``<A_i M, W> = y_i``.

    Parameters
    ----------
    problem : CompletionProblem or SensingProblem
    M : (d2, d2) symmetric PSD filter
    ridge : float
        Added to the Gram system; ``0`` demands an exactly consistent system.

    Returns
    -------
    W : (d1, d2) ndarray
    """
    problem = _matrix_problem(problem)
    M = symmetrize(M)
    W, _ = filtered_interpolate(problem.operator, _labels(problem), M, ridge, FFt=M @ M)
    return W


def enforce_observed(Z, problem):
    """Copy of ``Z`` with the observed entries of a completion problem re-imposed."""
    if not isinstance(problem, CompletionProblem):
        return Z
    Z = Z.copy()
    Z[problem.rows, problem.cols] = problem.values
    return Z


def _fit(problem, M, config):
    W = min_frob_interpolate(problem, M, config.ridge)
    Z = W @ M
    if config.enforce_observed:
        Z = enforce_observed(Z, problem)
    return W, Z


def agop_update(Z, phi):
    """``phi(Z^T Z)``."""
    if isinstance(phi, Identity):
        # Z^T Z is already PSD; skip the eigendecomposition
        return symmetrize(Z.T @ Z)
    return spectral_apply(Z.T @ Z, phi)


# -------------------------------------------------------------------- iteration


def initial_state(problem, config, init_M=None):
    """Fit through ``init_M`` (identity by default); this is iterate ``t = 0``."""
    problem = _matrix_problem(problem)
    d2 = problem.shape[1]
    M = np.eye(d2) if init_M is None else symmetrize(init_M)
    if M.shape != (d2, d2):
        raise ValueError(f"init_M must be {d2}x{d2}, got {M.shape}")
    W, Z = _fit(problem, M, config)
    return RfmState(M=M, W=W, Z=Z, t=0)


def lin_rfm_step(state, problem, config):
    """One filter update followed by a refit: ``M' = phi(Z^T Z)``, ``W' = fit(M')``, ``Z' = W' M'``."""
    problem = _matrix_problem(problem)
    M = agop_update(state.Z, config.phi)
    if config.check_pd and getattr(config.phi, "strictly_positive", False):
        lam_min = eigh_desc(M).values[-1]
        if not lam_min > 0:
            raise NumericFailure(f"filter lost positive definiteness (min eigenvalue {lam_min:.3e})")
    W, Z = _fit(problem, M, config)
    return RfmState(M=M, W=W, Z=Z, t=state.t + 1)


def relative_change(new, old):
    den = np.linalg.norm(old)
    num = np.linalg.norm(new - old)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(num / den)


def objective_value(Z, phi):
    """``sum_j psi(sigma_j(Z))``; NaN where the integral diverges."""
    try:
        return float(np.sum(psi_eval(singular_values(Z), phi)))
    except (DivergentIntegral, QuadratureFailure):
        return float("nan")


def _trace_row(t, state, problem, config, z_change):
    row = {"iter": t, "z_change": z_change}
    row["objective"] = objective_value(state.Z, config.phi) if config.record_objective else None
    row["feasibility"] = float(np.linalg.norm(problem.operator.apply(state.Z) - _labels(problem)))
    if config.track_test_mse and problem.ground_truth is not None:
        row["test_mse"] = test_mse(state.Z, problem)
    return row


def lin_rfm_run(problem, config=None, init_M=None, callback=None):
    """Iterate until the relative change of ``Z`` drops below ``config.tol``.

    Returns
    -------
    state : RfmState
        Final iterate; ``state.converged`` is False when ``max_iters`` was hit.
    trace : Trace
        One row per iterate with columns ``iter, objective, z_change,
        feasibility, test_mse``.
    """
    config = config or RfmConfig()
    problem = _matrix_problem(problem)
    state = initial_state(problem, config, init_M)
    trace = Trace(TRACE_COLUMNS)
    trace.append(_trace_row(0, state, problem, config, float("nan")))
    converged = False
    for _ in range(config.max_iters):
        new = lin_rfm_step(state, problem, config)
        change = relative_change(new.Z, state.Z)
        state = new
        trace.append(_trace_row(state.t, state, problem, config, change))
        if callback is not None:
            callback(state)
        if not config.fixed_iterations and change < config.tol:
            converged = True
            break
    return RfmState(state.M, state.W, state.Z, state.t, converged), trace


def diag_rfm_run(problem, config=None):
    """Coordinate-wise iteration for sparse regression.

    ``w = argmin ||w||_2 s.t. X (w * m) = y``, then ``m <- phi((w * m)**2)``.

    Returns
    -------
    beta : (d,) ndarray
        Effective predictor ``w * m``.
    trace : Trace
    """
    config = config or RfmConfig()
    X, y = problem.design, problem.labels
    phi = config.phi
    m = np.ones(problem.d)

    def fit(m):
        w = pseudo_inverse_solve(X * m, y, config.ridge)
        return w * m

    def row(t, beta, change):
        out = {"iter": t, "z_change": change}
        if config.record_objective:
            try:
                out["objective"] = float(np.sum(psi_eval(np.abs(beta), phi)))
            except (DivergentIntegral, QuadratureFailure):
                out["objective"] = float("nan")
        out["feasibility"] = float(np.linalg.norm(X @ beta - y))
        if config.track_test_mse and problem.true_weights is not None:
            out["test_mse"] = test_mse(beta, problem)
        return out

    beta = fit(m)
    trace = Trace(TRACE_COLUMNS, [row(0, beta, float("nan"))])
    for t in range(1, config.max_iters + 1):
        m = np.asarray(phi(beta**2), dtype=float)
        if not np.all(np.isfinite(m)):
            raise NumericFailure("non-finite filter entries")
        new = fit(m)
        change = relative_change(new, beta)
        beta = new
        trace.append(row(t, beta, change))
        if not config.fixed_iterations and change < config.tol:
            break
    return beta, trace


# ----------------------------------------------------------------- objective


def _power_psi(s, alpha, eps):
    r2 = s * s + eps
    if alpha == 0.5:
        if eps == 0:
            if np.any(s > 0):
                raise DivergentIntegral("psi diverges at 0 for alpha = 1/2 and epsilon = 0")
            return np.zeros_like(s)
        return 0.5 * (np.log(r2) - np.log(eps))
    expo = 1.0 - 2.0 * alpha
    if eps == 0 and expo <= 0:
        if np.any(s > 0):
            raise DivergentIntegral(f"psi diverges at 0 for alpha = {alpha} and epsilon = 0")
        return np.zeros_like(s)
    base = 0.0 if eps == 0 else eps**expo
    return (np.power(r2, expo) - base) / (2.0 - 4.0 * alpha)


def psi_eval(s, phi):
    """``psi(s) = int_0^s r / phi(r^2)^2 dr`` (vectorized over ``s``).

    Closed forms are used for :class:`Power`, :class:`Identity` and
    :class:`HalfIntegerPower`; any other callable goes through adaptive
    quadrature with absolute tolerance ``1e-10``.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("psi is defined for s >= 0")
    alpha = getattr(phi, "alpha", None)
    eps = getattr(phi, "epsilon", None)
    if alpha is not None and eps is not None:
        out = _power_psi(s_arr, float(alpha), float(eps))
    else:
        out = np.vectorize(lambda v: _psi_quad(v, phi), otypes=[float])(s_arr)
    return out if out.ndim else float(out)


def _psi_quad(s, phi):
    if s == 0:
        return 0.0

    def integrand(r):
        val = float(np.asarray(phi(np.array([r * r])), dtype=float)[0])
        return r / (val * val)

    with np.errstate(divide="ignore", invalid="ignore"):
        value, err = scipy.integrate.quad(integrand, 0.0, s, epsabs=1e-10, epsrel=1e-12, limit=200)
    if not np.isfinite(value):
        raise DivergentIntegral("psi integral is not finite")
    if err > 1e-8 + 1e-8 * abs(value):
        raise QuadratureFailure(f"quadrature error estimate {err:.2e} too large")
    return value


# --------------------------------------------------------------- certificate


def _inverse_square_map(phi):
    def fn(lam):
        vals = np.asarray(phi(lam), dtype=float)
        out = np.zeros_like(vals)
        # pseudo-inverse convention on the null space of Z^T Z
        keep = vals > 0
        out[keep] = vals[keep] ** -2.0
        return out

    return fn


def fixed_point_residual(Z, problem, phi):
    """Check first-order optimality of ``Z`` for ``min sum psi(sigma_j(Z))`` s.t. ``A(Z) = y``.

    The gradient ``G = 2 Z phi(Z^T Z)^{-2}`` must lie in the range of the
    adjoint measurement map.  Multipliers are fit by least squares and the
    remaining part of ``G`` is reported relative to ``||G||_F``.  Directions in
    the null space of ``Z^T Z`` are dropped (pseudo-inverse convention), which
    only matters when ``phi(0) = 0``.
    """
    problem = _matrix_problem(problem)
    Z = np.asarray(Z, dtype=float)
    eig = eigh_desc(Z.T @ Z)
    if getattr(phi, "strictly_positive", True) is False:
        # zero out eigenvalues at rounding level so that phi(lam)^-2 stays finite
        lam = eig.values.copy()
        lam[lam < 1e-12 * max(lam[0], 0.0)] = 0.0
        eig = eig._replace(values=lam)
    G = 2.0 * Z @ apply_to_eig(eig, _inverse_square_map(phi))
    return certify_gradient(G, Z, problem, objective_value(Z, phi))


def certify_gradient(G, Z, problem, objective=float("nan")):
    """Stationarity of ``G`` against the measurement constraints.

    Multipliers ``lambda`` are chosen to minimize ``||G + A^*(lambda)||_F`` and
    the remainder is reported both absolutely and relative to ``||G||_F``.
    """
    problem = _matrix_problem(problem)
    op = problem.operator
    g_norm = float(np.linalg.norm(G))
    if isinstance(problem, CompletionProblem):
        lam = -G[problem.rows, problem.cols]
        R = G.copy()
        R[problem.rows, problem.cols] = 0.0
    else:
        flat = op.matrices.reshape(op.n, -1)
        lam = np.linalg.lstsq(flat.T, -G.ravel(), rcond=None)[0]
        R = G + op.adjoint(lam)
    r_abs = float(np.linalg.norm(R))
    feas = float(np.linalg.norm(op.apply(Z) - problem.labels))
    return FixedPointCertificate(
        multipliers=lam,
        stationarity_residual=r_abs / g_norm if g_norm > 0 else 0.0,
        feasibility_residual=feas,
        objective_value=objective,
        stationarity_abs=r_abs,
    )

__all__ = [
    "RfmConfig",
    "RfmState",
    "FixedPointCertificate",
    "filtered_interpolate",
    "min_frob_interpolate",
    "enforce_observed",
    "agop_update",
    "initial_state",
    "lin_rfm_step",
    "lin_rfm_run",
    "diag_rfm_run",
    "psi_eval",
    "objective_value",
    "fixed_point_residual",
    "certify_gradient",
]
