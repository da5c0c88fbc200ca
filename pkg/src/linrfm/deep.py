"""Depth-L lin-RFM and the scalar algebra describing its fixed points.

The predictor is ``<A, W M_L ... M_1>``.  Each iteration fits ``W`` by
minimum-norm interpolation through the product filter and then refreshes
every layer from the layer-wise gradient outer product::

    M_l <- phi_l(M_l^T ... M_L^T W^T W M_L ... M_l),   phi_l(s) = (s + eps)**alpha_l

At a fixed point the filters are functions of ``Z^T Z`` and the iteration
minimizes ``sum psi_eps(sigma_j(Z))`` with ``psi_eps' = r h_1(r)^-2 ... h_L(r)^-2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Tuple

import numpy as np
import scipy.integrate

from .exceptions import ConfigError, QuadratureFailure
from .problems import test_mse
from .rfm import _matrix_problem, certify_gradient, filtered_interpolate, relative_change
from .spectral import Power, spectral_apply, singular_values, symmetrize
from .trace import Trace

BASE_COLUMNS = ("iter", "objective", "z_change", "feasibility", "test_mse")


def c_coefficients(alphas):
    """Per-layer exponent weights ``C_l = alpha_l prod_{j<l} (1 - 2 alpha_j)``.

    ``sum_l C_l`` is the power of the shallow iteration with the same
    ``eps -> 0`` objective.  Exact when ``alphas`` are :class:`fractions.Fraction`.
    """
    out = []
    carry = 1 if all(isinstance(a, (int, Fraction)) for a in alphas) else 1.0
    for a in alphas:
        out.append(a * carry)
        carry = carry * (1 - 2 * a)
    return out


def balanced_alphas(L, exact=False):
    """``alpha_l = 1 / (2 (L - l + 2))``, for which every ``C_l = 1 / (2 (L + 1))``."""
    if exact:
        return [Fraction(1, 2 * (L - l + 2)) for l in range(1, L + 1)]
    return [1.0 / (2 * (L - l + 2)) for l in range(1, L + 1)]


def check_preconditions(alphas, warn=True):
    """True when every ``C_l > 0`` and ``sum C_l < 1/2``; warns otherwise."""
    c = c_coefficients(alphas)
    ok = all(v > 0 for v in c) and sum(c) < 0.5
    if not ok and warn:
        warnings.warn(
            f"layer powers give C = {[float(v) for v in c]}; the eps -> 0 limit of psi_eps is not covered",
            RuntimeWarning,
            stacklevel=2,
        )
    return ok


def h_recursion(s, alphas, epsilon):
    """``h_1 .. h_L`` at ``s`` (vectorized); shape ``(L,) + s.shape``.

    ``h_1 = (s^2 + eps)^alpha_1`` and
    ``h_l = (s^2 h_1^-2 ... h_{l-1}^-2 + eps)^alpha_l``.
    """
    s = np.asarray(s, dtype=float)
    base = s * s
    out = []
    for a in alphas:
        h = np.power(base + epsilon, a)
        out.append(h)
        base = base / (h * h)
    return np.stack(out)


def psi_prime(r, alphas, epsilon, normalize=True):
    """Derivative of :func:`psi_eps_eval`: ``r prod_l h_l(r)^-2`` times the normalization."""
    h = h_recursion(r, alphas, epsilon)
    return _scale(alphas, normalize) * np.asarray(r, dtype=float) / np.prod(h * h, axis=0)


def _scale(alphas, normalize):
    if not normalize:
        return 1.0
    total = float(sum(c_coefficients(alphas)))
    if total >= 0.5:
        return 1.0
    return 2.0 - 4.0 * total


def psi_eps_eval(r, alphas, epsilon, normalize=True):
    """``psi_eps(r) = c int_0^r s h_1(s)^-2 ... h_L(s)^-2 ds`` by adaptive quadrature.

    Parameters
    ----------
    r : float
        Upper limit, ``>= 0``.
    alphas : sequence of float
    epsilon : float
        ``> 0``.
    normalize : bool
        Use ``c = 2 - 4 sum C_l`` so that ``psi_eps(r) -> r^(2 - 4 sum C_l)`` as
        ``eps -> 0``; ``c = 1`` when ``normalize`` is False or the sum is not
        below ``1/2``.

    Raises
    ------
    QuadratureFailure
        When the summed error estimate exceeds ``1e-10`` plus ``1e-10`` relative.
    """
    r = float(r)
    if r < 0 or not epsilon > 0:
        raise ValueError("psi_eps_eval needs r >= 0 and epsilon > 0")
    if r == 0:
        return 0.0

    def integrand(s):
        return float(psi_prime(s, alphas, epsilon, normalize))

    # the integrand changes shape at several nested scales below sqrt(eps);
    # split [0, r] geometrically so each piece is smooth
    n_split = 24
    edges = [0.0] + [r * 10.0**-k for k in range(n_split, 0, -1)] + [r]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, e = scipy.integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)
        total += val
        err += e
    if not np.isfinite(total) or err > 1e-10 + 1e-10 * abs(total):
        raise QuadratureFailure(f"psi_eps quadrature error estimate {err:.2e}")
    return total


def psi_eps_limit(r, alphas):
    """``r^(2 - 4 sum C_l)``."""
    return float(r) ** (2.0 - 4.0 * float(sum(c_coefficients(alphas))))


# ------------------------------------------------------------------ iteration


@dataclass(frozen=True)
class DeepRfmConfig:
    """Settings for depth-L lin-RFM.

    ``record_objective`` evaluates ``sum psi_eps(sigma_j(Z))`` by quadrature at
    every iteration and is off by default.
    """

    alphas: Tuple[float, ...] = (0.5,)
    epsilon: float = 1e-6
    max_iters: int = 10_000
    tol: float = 1e-10
    ridge: float = 1e-10
    fixed_iterations: bool = False
    record_objective: bool = False
    track_test_mse: bool = False
    phis: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if not self.alphas:
            raise ConfigError("alphas", "need at least one layer")
        if any(not a > 0 for a in self.alphas):
            raise ConfigError("alphas", f"all powers must be > 0, got {self.alphas}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon", f"must be > 0, got {self.epsilon}")
        if not self.tol > 0:
            raise ConfigError("tol", f"must be > 0, got {self.tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("max_iters", f"must be a positive integer, got {self.max_iters}")
        if self.ridge < 0:
            raise ConfigError("ridge", f"must be >= 0, got {self.ridge}")
        object.__setattr__(self, "phis", tuple(Power(a, self.epsilon) for a in self.alphas))

    @property
    def depth(self):
        return len(self.alphas)


@dataclass(frozen=True, eq=False)
class DeepRfmState:
    """``W`` fitted through ``filters = [M_1, ..., M_L]`` and ``Z = W M_L ... M_1``."""

    W: np.ndarray
    filters: list
    Z: np.ndarray
    t: int = 0
    converged: bool = False


def product_filter(filters):
    """``M_L ... M_1``."""
    P = filters[0]
    for M in filters[1:]:
        P = M @ P
    return P


def deep_fit(problem, filters, ridge=0.0):
    """Minimum-Frobenius ``W`` with ``<A_i, W M_L ... M_1> = y_i``; returns ``(W, Z)``."""
    problem = _matrix_problem(problem)
    F = product_filter(filters)
    # <A_i, W F> = <A_i F^T, W>
    W, _ = filtered_interpolate(problem.operator, problem.labels, F.T, ridge, FFt=F.T @ F)
    return W, W @ F


def layer_updates(W, filters, phis):
    """New filters ``phi_l(B_l^T B_l)`` with ``B_l = W M_L ... M_l`` (all from the old filters)."""
    L = len(filters)
    new = [None] * L
    B = W
    for l in range(L - 1, -1, -1):
        B = B @ filters[l]
        new[l] = spectral_apply(B.T @ B, phis[l])
    return new


def deep_lin_rfm_step(state, problem, config):
    filters = layer_updates(state.W, state.filters, config.phis)
    W, Z = deep_fit(problem, filters, config.ridge)
    return DeepRfmState(W=W, filters=filters, Z=Z, t=state.t + 1)


def _cond(M):
    s = np.linalg.eigvalsh(symmetrize(M))
    return float(s[-1] / s[0]) if s[0] > 0 else float("inf")


def deep_lin_rfm_run(problem, config=None, callback=None):
    """Run from ``M_l = I`` until ``Z`` changes by less than ``config.tol``.

    Returns
    -------
    state : DeepRfmState
    trace : Trace
        lin-RFM columns plus ``cond_1 .. cond_L``, the condition number of
        each filter.
    """
    config = config or DeepRfmConfig()
    problem = _matrix_problem(problem)
    d2 = problem.shape[1]
    L = config.depth
    columns = list(BASE_COLUMNS) + [f"cond_{l + 1}" for l in range(L)]
    trace = Trace(columns)
    filters = [np.eye(d2) for _ in range(L)]
    W, Z = deep_fit(problem, filters, config.ridge)
    state = DeepRfmState(W=W, filters=filters, Z=Z, t=0)

    def record(change):
        row = {"iter": state.t, "z_change": change}
        if config.record_objective:
            row["objective"] = float(
                sum(psi_eps_eval(s, config.alphas, config.epsilon) for s in singular_values(state.Z))
            )
        row["feasibility"] = float(np.linalg.norm(problem.operator.apply(state.Z) - problem.labels))
        if config.track_test_mse and problem.ground_truth is not None:
            row["test_mse"] = test_mse(state.Z, problem)
        for l, M in enumerate(state.filters):
            row[f"cond_{l + 1}"] = _cond(M)
        trace.append(row)

    record(float("nan"))
    converged = False
    for _ in range(config.max_iters):
        new = deep_lin_rfm_step(state, problem, config)
        change = relative_change(new.Z, state.Z)
        state = new
        record(change)
        if callback is not None:
            callback(state)
        if not config.fixed_iterations and change < config.tol:
            converged = True
            break
    return DeepRfmState(state.W, state.filters, state.Z, state.t, converged), trace


def deep_fixed_point_residual(Z, problem, alphas, epsilon):
    """Stationarity of ``Z`` for ``min sum psi_eps(sigma_j(Z))`` s.t. ``A(Z) = y``.

    The gradient is ``U diag(psi_eps'(sigma)) V^T`` with the closed-form
    derivative ``r prod_l h_l(r)^-2``.
    """
    problem = _matrix_problem(problem)
    U, s, Vt = np.linalg.svd(np.asarray(Z, dtype=float), full_matrices=False)
    G = (U * psi_prime(s, alphas, epsilon)) @ Vt
    return certify_gradient(G, Z, problem)


__all__ = [
    "c_coefficients",
    "balanced_alphas",
    "check_preconditions",
    "h_recursion",
    "psi_prime",
    "psi_eps_eval",
    "psi_eps_limit",
    "DeepRfmConfig",
    "DeepRfmState",
    "product_filter",
    "deep_fit",
    "layer_updates",
    "deep_lin_rfm_step",
    "deep_lin_rfm_run",
    "deep_fixed_point_residual",
]
