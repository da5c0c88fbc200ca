"""scikit-learn style estimators over the functional solvers.

Completion estimators take ``X`` as an ``(n, 2)`` integer array of
``(row, col)`` coordinates and ``y`` as the observed values; ``predict``
reads the completed matrix at the given coordinates.  A
:class:`~linrfm.problems.CompletionProblem` may be passed as ``X`` instead
(with ``y=None``).  Regression estimators follow the usual ``(X, y)``
convention.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baselines import (
    GD,
    DiagNearZero,
    Gaussian,
    RMSProp,
    TrainConfig,
    init_net,
    l1_min,
    nuclear_norm_min,
    train_diag_net,
    train_linear_net,
)
from .deep import DeepRfmConfig, balanced_alphas, deep_lin_rfm_run
from .exceptions import InvalidDims
from .irls import IrlsConfig, irls_run
from .problems import CompletionProblem, SparseRegressionProblem
from .rfm import RfmConfig, diag_rfm_run, lin_rfm_run
from .spectral import Power
from .svdfree import svdfree_run


def _coordinates(X, shape=None):
    X = check_array(X, dtype=None, ensure_min_samples=0)
    if X.shape[1] != 2:
        raise InvalidDims(f"expected (n, 2) coordinates, got shape {X.shape}")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise InvalidDims("coordinates must be integers")
        X = X.astype(np.intp)
    rows, cols = X[:, 0], X[:, 1]
    if rows.size and (rows.min() < 0 or cols.min() < 0):
        raise InvalidDims("coordinates must be non-negative")
    if shape is not None and rows.size and (rows.max() >= shape[0] or cols.max() >= shape[1]):
        raise InvalidDims(f"coordinate outside the {shape[0]} x {shape[1]} matrix")
    return rows, cols


class _CompletionEstimator(RegressorMixin, BaseEstimator):
    """Shared ``fit``/``predict``; subclasses implement ``_solve(problem) -> Z``."""

    def _problem(self, X, y):
        if isinstance(X, CompletionProblem):
            if y is not None:
                raise ValueError("pass y=None together with a CompletionProblem")
            return X
        rows, cols = _coordinates(X, self.shape)
        y = np.asarray(y, dtype=float).ravel()
        if y.size != rows.size:
            raise InvalidDims(f"{rows.size} coordinates but {y.size} values")
        if self.shape is not None:
            d1, d2 = self.shape
        else:
            d1 = int(rows.max()) + 1 if rows.size else 0
            d2 = int(cols.max()) + 1 if cols.size else 0
        return CompletionProblem(d1, d2, rows, cols, y)

    def fit(self, X, y=None):
        problem = self._problem(X, y)
        self.completion_ = self._solve(problem)
        self.shape_ = problem.shape
        return self

    def predict(self, X):
        check_is_fitted(self, "completion_")
        rows, cols = _coordinates(X, self.shape_)
        return self.completion_[rows, cols]


class LinRFMCompletion(_CompletionEstimator):
    """Linear RFM with ``phi = (s + epsilon)**alpha`` through eigendecompositions.

    Attributes
    ----------
    completion_ : (d1, d2) ndarray
    filter_ : (d2, d2) ndarray
        Final feature filter ``M``.
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, alpha=0.5, epsilon=0.0, ridge=1e-2, max_iters=1000, tol=1e-10, shape=None):
        self.alpha = alpha
        self.epsilon = epsilon
        self.ridge = ridge
        self.max_iters = max_iters
        self.tol = tol
        self.shape = shape

    def _solve(self, problem):
        cfg = RfmConfig(phi=Power(self.alpha, self.epsilon), ridge=self.ridge, max_iters=self.max_iters,
                        tol=self.tol, record_objective=False)
        state, trace = lin_rfm_run(problem, cfg)
        self.filter_ = state.M
        self.n_iter_ = state.t
        self.converged_ = state.converged
        self.trace_ = trace
        return state.Z


class SvdFreeCompletion(_CompletionEstimator):
    """Linear RFM with ``phi(s) = s**(k/2)`` using row-wise solves only."""

    def __init__(self, alpha_numerator=1, ridge=1e-2, max_iters=10_000, tol=1e-10, shape=None):
        self.alpha_numerator = alpha_numerator
        self.ridge = ridge
        self.max_iters = max_iters
        self.tol = tol
        self.shape = shape

    def _solve(self, problem):
        Z, trace = svdfree_run(problem, self.alpha_numerator, ridge=self.ridge, max_iters=self.max_iters,
                               tol=self.tol, track_test_mse=False, timing=False)
        self.n_iter_ = trace.info["n_iter"]
        self.converged_ = trace.info["converged"]
        self.trace_ = trace
        return Z


class DeepRFMCompletion(_CompletionEstimator):
    """Depth-L linear RFM; ``alphas=None`` uses the two-layer balanced powers."""

    def __init__(self, alphas=None, epsilon=1e-6, ridge=1e-10, max_iters=1000, tol=1e-10, shape=None):
        self.alphas = alphas
        self.epsilon = epsilon
        self.ridge = ridge
        self.max_iters = max_iters
        self.tol = tol
        self.shape = shape

    def _solve(self, problem):
        alphas = balanced_alphas(2) if self.alphas is None else self.alphas
        cfg = DeepRfmConfig(alphas=alphas, epsilon=self.epsilon, ridge=self.ridge, max_iters=self.max_iters, tol=self.tol)
        state, trace = deep_lin_rfm_run(problem, cfg)
        self.filters_ = state.filters
        self.n_iter_ = state.t
        self.converged_ = state.converged
        self.trace_ = trace
        return state.Z


class IRLSCompletion(_CompletionEstimator):
    """IRLS-p with a constant smoothing ``eps0``."""

    def __init__(self, p=1.0, eps0=1e-6, ridge=1e-10, max_iters=1000, tol=1e-10, shape=None):
        self.p = p
        self.eps0 = eps0
        self.ridge = ridge
        self.max_iters = max_iters
        self.tol = tol
        self.shape = shape

    def _solve(self, problem):
        cfg = IrlsConfig(p=self.p, eps0=self.eps0, ridge=self.ridge, max_iters=self.max_iters, tol=self.tol)
        state, trace = irls_run(problem, cfg)
        self.weight_ = state.P
        self.n_iter_ = state.t
        self.converged_ = trace.info["converged"]
        self.trace_ = trace
        return state.X


class NuclearNormCompletion(_CompletionEstimator):
    """Minimum nuclear norm matrix agreeing with the observations."""

    def __init__(self, tol=1e-7, max_iters=50_000, shape=None):
        self.tol = tol
        self.max_iters = max_iters
        self.shape = shape

    def _solve(self, problem):
        Z, info = nuclear_norm_min(problem, tol=self.tol, max_iters=self.max_iters, return_info=True)
        self.n_iter_ = info["iters"]
        return Z


class LinearNetCompletion(_CompletionEstimator):
    """Deep linear network of width ``d`` trained on the observed entries."""

    def __init__(self, depth=3, optimizer="rmsprop", lr=1e-3, steps=20_000, init_std=None, random_state=None, shape=None):
        self.depth = depth
        self.optimizer = optimizer
        self.lr = lr
        self.steps = steps
        self.init_std = init_std
        self.random_state = random_state
        self.shape = shape

    def _solve(self, problem):
        if self.optimizer not in ("rmsprop", "gd"):
            raise ValueError(f"optimizer must be 'rmsprop' or 'gd', got {self.optimizer!r}")
        opt = RMSProp(self.lr) if self.optimizer == "rmsprop" else GD(self.lr)
        cfg = TrainConfig(optimizer=opt, steps=self.steps, init=Gaussian(self.init_std),
                          eval_every=self.steps, seed=self.random_state)
        net, trace = train_linear_net(problem, init_net(problem, self.depth, cfg), cfg)
        self.net_ = net
        self.trace_ = trace
        return net.end_to_end()


# --------------------------------------------------------------- regression


class _SparseRegressor(RegressorMixin, BaseEstimator):
    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.coef_ = np.asarray(self._solve(SparseRegressionProblem(X, y)), dtype=float)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise InvalidDims(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_


class DiagRFMRegressor(TransformerMixin, _SparseRegressor):
    """Coordinate-wise linear RFM; ``alpha = 1/4`` tracks basis pursuit.

    ``transform`` reweights features by the filter computed from the fitted
    coefficients, ``phi(coef_**2)``.
    """

    def __init__(self, alpha=0.25, epsilon=0.0, ridge=1e-10, max_iters=1000, tol=1e-10):
        self.alpha = alpha
        self.epsilon = epsilon
        self.ridge = ridge
        self.max_iters = max_iters
        self.tol = tol

    def _solve(self, problem):
        phi = Power(self.alpha, self.epsilon)
        cfg = RfmConfig(phi=phi, ridge=self.ridge, max_iters=self.max_iters, tol=self.tol, record_objective=False)
        beta, trace = diag_rfm_run(problem, cfg)
        self.filter_ = phi(beta**2)
        self.n_iter_ = len(trace) - 1
        self.trace_ = trace
        return beta

    def transform(self, X):
        check_is_fitted(self, "filter_")
        return check_array(X) * self.filter_


class L1Regressor(_SparseRegressor):
    """Basis pursuit: minimum l1 norm interpolating coefficients."""

    def __init__(self, tol=1e-8, max_iters=100_000):
        self.tol = tol
        self.max_iters = max_iters

    def _solve(self, problem):
        w, info = l1_min(problem, tol=self.tol, max_iters=self.max_iters, return_info=True)
        self.n_iter_ = info["iters"]
        return w


class DiagNetRegressor(_SparseRegressor):
    """Diagonal linear network ``x^T (w_L * ... * w_1)`` trained by gradient descent."""

    def __init__(self, depth=2, lr=0.1, steps=100_000, init_std=1e-5, random_state=None):
        self.depth = depth
        self.lr = lr
        self.steps = steps
        self.init_std = init_std
        self.random_state = random_state

    def _solve(self, problem):
        cfg = TrainConfig(optimizer=GD(self.lr), steps=self.steps, init=DiagNearZero(self.init_std),
                          eval_every=self.steps, seed=self.random_state)
        w, trace = train_diag_net(problem, self.depth, cfg)
        self.trace_ = trace
        return w


__all__ = [
    "LinRFMCompletion",
    "SvdFreeCompletion",
    "DeepRFMCompletion",
    "IRLSCompletion",
    "NuclearNormCompletion",
    "LinearNetCompletion",
    "DiagRFMRegressor",
    "L1Regressor",
    "DiagNetRegressor",
]
