"""Iteratively reweighted least squares (IRLS-p) for low-rank recovery.

Each step solves a weighted minimum-norm interpolation and refreshes the
weight from the current estimate::

    X_t     = argmin tr(P_t X^T X)  s.t.  <A_i, X> = y_i
    P_{t+1} = (X_t^T X_t + eps_t I)^(p/2 - 1)

Writing ``X = W P^{-1/2}`` turns the first step into a minimum-Frobenius
interpolation through the filter ``P^{-1/2}``, so ``P^{-1}`` is never formed.
With ``p = 2 - 4 alpha`` and a constant ``eps`` the iterates coincide with
lin-RFM run with ``phi(s) = (s + eps)**alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .exceptions import ConfigError
from .problems import CompletionProblem
from .rfm import (
    RfmConfig,
    _matrix_problem,
    enforce_observed,
    initial_state,
    lin_rfm_step,
    min_frob_interpolate,
    objective_value,
    relative_change,
)
from .spectral import EigenDecomposition, Power, apply_to_eig, eigh_desc, spectral_apply, symmetrize
from .trace import Trace

TRACE_COLUMNS = ("iter", "objective", "x_change", "feasibility", "eps")
#: Slack before an objective increase is reported by the descent monitor.
DESCENT_SLACK = 1e-9


@dataclass(frozen=True)
class ConstantEps:
    def advance(self, eps):
        return eps


@dataclass(frozen=True)
class GeometricEps:
    """``eps_{t+1} = ratio * eps_t``."""

    ratio: float

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ConfigError("eps_schedule", f"ratio must lie in (0, 1], got {self.ratio}")

    def advance(self, eps):
        return eps * self.ratio


EpsSchedule = Union[ConstantEps, GeometricEps]


@dataclass(frozen=True)
class IrlsConfig:
    """IRLS-p settings.

    Parameters
    ----------
    p : float
        Exponent; negative values are allowed.  ``p = 2 - 4 alpha``.
    eps0 : float
        Initial smoothing, ``> 0``.
    eps_schedule : ConstantEps or GeometricEps
    max_iters, tol : iteration cap and relative-change stopping rule.
    ridge : float
        Tikhonov term of the interpolation Gram system.
    enforce_observed : bool
        Re-impose observed entries on ``X`` (completion only); a no-op when the
        interpolation is exact.
    """

    p: float
    eps0: float = 1e-6
    eps_schedule: EpsSchedule = ConstantEps()
    max_iters: int = 1000
    tol: float = 1e-10
    ridge: float = 1e-10
    enforce_observed: bool = True

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ConfigError("eps0", f"must be > 0, got {self.eps0}")
        if not self.p < 2:
            raise ConfigError("p", f"must be < 2, got {self.p}")
        if not self.tol > 0:
            raise ConfigError("tol", f"must be > 0, got {self.tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("max_iters", f"must be a positive integer, got {self.max_iters}")
        if self.ridge < 0:
            raise ConfigError("ridge", f"must be >= 0, got {self.ridge}")

    @property
    def alpha(self):
        """Matching lin-RFM power ``(2 - p) / 4``."""
        return (2.0 - self.p) / 4.0


@dataclass(frozen=True, eq=False)
class IrlsState:
    """Weight ``P`` for the next solve and the estimate ``X`` from the previous one.

    ``root`` caches ``P^{-1/2}`` when it was built from the same
    eigendecomposition as ``P``; it is recomputed from ``P`` otherwise.
    """

    X: Optional[np.ndarray]
    P: np.ndarray
    eps_t: float
    t: int = 0
    root: Optional[np.ndarray] = None

    def weight_root(self):
        if self.root is not None:
            return self.root
        return spectral_apply(self.P, lambda lam: np.power(lam, -0.5))


def irls_init(problem, config):
    """``P_0 = I``, ``eps_0 = config.eps0``; no estimate yet."""
    d2 = _matrix_problem(problem).shape[1]
    eye = np.eye(d2)
    return IrlsState(X=None, P=eye, eps_t=float(config.eps0), t=0, root=eye)


def _weights_from(X, eps, p):
    # P and P^{-1/2} share the eigenvectors of X^T X + eps I
    eig = eigh_desc(X.T @ X)
    shifted = EigenDecomposition(np.maximum(eig.values, 0.0) + eps, eig.vectors)
    P = apply_to_eig(shifted, lambda lam: np.power(lam, p / 2.0 - 1.0))
    root = apply_to_eig(shifted, lambda lam: np.power(lam, (1.0 - p / 2.0) / 2.0))
    return P, root


def irls_step(state, problem, config):
    """Weighted interpolation through ``state.P``, then the weight and ``eps`` updates.

    Returns
    -------
    IrlsState
        ``X`` solves the weighted problem for ``state.P``; ``P`` is built from
        that ``X`` with ``state.eps_t``; ``eps_t`` is advanced by the schedule.
    """
    problem = _matrix_problem(problem)
    root = symmetrize(state.weight_root())
    X = min_frob_interpolate(problem, root, config.ridge) @ root
    if config.enforce_observed:
        X = enforce_observed(X, problem)
    P, new_root = _weights_from(X, state.eps_t, config.p)
    eps = config.eps_schedule.advance(state.eps_t)
    return IrlsState(X=X, P=P, eps_t=eps, t=state.t + 1, root=new_root)


def irls_run(problem, config, callback=None):
    """Iterate :func:`irls_step` until ``X`` stops changing.

    Returns
    -------
    state : IrlsState
    trace : Trace
        Columns ``iter, objective, x_change, feasibility, eps``.  The objective
        is ``sum psi(sigma_j(X))`` for the matching power ``alpha`` and the
        current ``eps``.  ``trace.info`` holds ``converged`` and
        ``descent_violations``, the iterations (after the first) where the
        objective rose by more than ``1e-9`` relative.
    """
    problem = _matrix_problem(problem)
    state = irls_init(problem, config)
    trace = Trace(TRACE_COLUMNS)
    violations = []
    converged = False
    prev = None
    for _ in range(config.max_iters):
        eps_used = state.eps_t
        state = irls_step(state, problem, config)
        t = state.t - 1
        change = float("nan") if prev is None else relative_change(state.X, prev)
        obj = objective_value(state.X, Power(config.alpha, eps_used))
        feas = float(np.linalg.norm(problem.operator.apply(state.X) - problem.labels))
        if t >= 2 and np.isfinite(obj):
            last = trace[-1]["objective"]
            if obj > last + DESCENT_SLACK * max(1.0, abs(last)):
                violations.append(t)
        trace.append({"iter": t, "objective": obj, "x_change": change, "feasibility": feas, "eps": eps_used})
        if callback is not None:
            callback(state)
        prev = state.X
        if np.isfinite(change) and change < config.tol:
            converged = True
            break
    trace.info = {"converged": converged, "descent_violations": violations}
    return state, trace


def rfm_irls_equivalence_check(problem, alpha, eps, iters=10, ridge=1e-10):
    """Largest relative gap between IRLS-p and lin-RFM iterates.

    Runs IRLS with ``p = 2 - 4 alpha`` and constant ``eps`` next to lin-RFM
    with ``phi = Power(alpha, eps)`` from ``M_0 = P_0 = I`` and compares, for
    ``t = 0 .. iters``, the estimates ``X_t`` against ``Z_t`` and the weights
    ``P_t`` against ``M_t^{-2}``.

    Returns
    -------
    float
        ``max_t max(||X_t - Z_t|| / ||Z_t||, ||P_t - M_t^{-2}|| / ||M_t^{-2}||)``.
    """
    problem = _matrix_problem(problem)
    p = 2.0 - 4.0 * alpha
    enforce = isinstance(problem, CompletionProblem)
    icfg = IrlsConfig(p=p, eps0=eps, ridge=ridge, enforce_observed=enforce)
    rcfg = RfmConfig(phi=Power(alpha, eps), ridge=ridge, enforce_observed=enforce, record_objective=False)
    rfm = initial_state(problem, rcfg)
    irls = irls_init(problem, icfg)
    worst = 0.0
    for t in range(iters + 1):
        if t > 0:
            rfm = lin_rfm_step(rfm, problem, rcfg)
        P_t = irls.P
        irls = irls_step(irls, problem, icfg)
        target = spectral_apply(rfm.M, lambda lam: np.power(lam, -2.0))
        worst = max(worst, relative_change(irls.X, rfm.Z), relative_change(P_t, target))
    return worst
