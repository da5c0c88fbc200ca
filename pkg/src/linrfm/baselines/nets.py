"""Deep linear networks and linear diagonal networks trained by first-order methods.

A depth-L linear network predicts ``<A, W_L ... W_1>``.  Training minimizes
``0.5 * sum_i (y_i - <A_i, W_L ... W_1>)^2`` with hand-derived layer gradients

    dL/dW_l = -(W_L ... W_{l+1})^T R (W_{l-1} ... W_1)^T,   R = sum_i r_i A_i

using full-batch gradient descent or RMSProp.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from ..exceptions import Divergence, FormatError, ShapeMismatch
from ..problems import CompletionProblem, SparseRegressionProblem, make_rng, test_mse
from ..spectral import spectral_apply
from ..trace import Trace

DIVERGENCE_LOSS = 1e12
NET_COLUMNS = ("step", "loss", "test_mse", "balancedness")
DIAG_COLUMNS = ("step", "loss", "test_mse")


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class GD:
    lr: float = 1e-3


@dataclass(frozen=True)
class RMSProp:
    """``v <- decay v + (1 - decay) g^2``;  ``W <- W - lr g / (sqrt(v) + eps)``."""

    lr: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8


@dataclass(frozen=True)
class Balanced:
    """Balanced factorization of a random end-to-end matrix with spectral norm ``scale``."""

    scale: float = 1.0


@dataclass(frozen=True)
class Gaussian:
    """i.i.d. ``N(0, std^2)`` entries; ``std=None`` means ``0.001**(1/L) / sqrt(d)``."""

    std: Optional[float] = None


@dataclass(frozen=True)
class DiagNearZero:
    std: float = 1e-5


Optimizer = Union[GD, RMSProp]
Init = Union[Balanced, Gaussian, DiagNearZero]


@dataclass(frozen=True)
class TrainConfig:
    """Training settings shared by linear and diagonal networks.

    Parameters
    ----------
    optimizer : GD or RMSProp
    steps : int
        Maximum number of full-batch updates.
    init : Balanced, Gaussian or DiagNearZero
    early_stop_mse : float, optional
        Stop once the test MSE (checked every ``eval_every`` steps) falls below it.
    eval_every : int
        Trace and early-stop cadence.
    record_defects : bool
        Add the balancedness defect to each trace row.
    seed : int, optional
        Initialization seed.
    """

    optimizer: Optimizer = field(default_factory=RMSProp)
    steps: int = 10_000
    init: Init = field(default_factory=Gaussian)
    early_stop_mse: Optional[float] = None
    eval_every: int = 100
    record_defects: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.optimizer.lr > 0:
            raise ValueError("learning rate must be > 0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


# ----------------------------------------------------------------- network


@dataclass(eq=False)
class LinearNet:
    """Weights ``[W_1, ..., W_L]``; ``W_1`` acts first."""

    weights: List[np.ndarray]
    accumulators: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        for lo, hi in zip(self.weights[:-1], self.weights[1:]):
            if hi.shape[1] != lo.shape[0]:
                raise ShapeMismatch(f"layer shapes {lo.shape} -> {hi.shape} do not compose")

    @property
    def depth(self):
        return len(self.weights)

    @property
    def shape(self):
        """Shape of the end-to-end matrix."""
        return (self.weights[-1].shape[0], self.weights[0].shape[1])

    def end_to_end(self):
        return _chain(self.weights)

    def copy(self):
        acc = None if self.accumulators is None else [a.copy() for a in self.accumulators]
        return LinearNet([W.copy() for W in self.weights], acc)


def _chain(mats):
    out = mats[0]
    for M in mats[1:]:
        out = M @ out
    return out


def layer_shapes(d1, d2, depth, width=None):
    """``[(width, d2), (width, width), ..., (d1, width)]``; width defaults to ``d2``."""
    width = d2 if width is None else width
    if depth == 1:
        return [(d1, d2)]
    return [(width, d2)] + [(width, width)] * (depth - 2) + [(d1, width)]


def gaussian_init(shapes, std, seed=None):
    rng = make_rng(seed, 11)
    return [std * rng.standard_normal(s) for s in shapes]


def default_std(depth, d):
    return 0.001 ** (1.0 / depth) * d**-0.5


def balanced_init(shapes, scale, seed=None, singular_values=None):
    """Weights with ``W_l W_l^T = W_{l+1}^T W_{l+1}`` for every ``l``.

    A random end-to-end matrix ``U S V^T`` (spectral norm ``scale``, or the
    given singular values) is split as ``W_1 = Q_1 S^(1/L) V^T``,
    ``W_l = Q_l S^(1/L) Q_{l-1}^T``, ``W_L = U S^(1/L) Q_{L-1}^T`` with random
    orthonormal ``Q_l``.

    Raises
    ------
    ShapeMismatch
        When intermediate layers are not square or consecutive shapes do not compose.
    """
    shapes = [tuple(s) for s in shapes]
    L = len(shapes)
    for lo, hi in zip(shapes[:-1], shapes[1:]):
        if hi[1] != lo[0]:
            raise ShapeMismatch(f"layer shapes {lo} -> {hi} do not compose")
    for s in shapes[1:-1]:
        if s[0] != s[1]:
            raise ShapeMismatch(f"intermediate layer {s} is not square")
    d1, d2 = shapes[-1][0], shapes[0][1]
    m = min([d1, d2] + [s[0] for s in shapes[:-1]])
    rng = make_rng(seed, 12)
    if scale == 0:
        return [np.zeros(s) for s in shapes]
    U, s, Vt = np.linalg.svd(rng.standard_normal((d1, d2)), full_matrices=False)
    U, Vt = U[:, :m], Vt[:m]
    if singular_values is None:
        s = scale * s[:m] / s[0]
    else:
        s = np.zeros(m)
        given = np.sort(np.asarray(singular_values, dtype=float))[::-1][:m]
        s[: given.size] = given
    root = np.diag(s ** (1.0 / L))
    if L == 1:
        return [U @ np.diag(s) @ Vt]
    Qs = [np.linalg.qr(rng.standard_normal((shapes[l][0], m)))[0] for l in range(L - 1)]
    weights = [Qs[0] @ root @ Vt]
    for l in range(1, L - 1):
        weights.append(Qs[l] @ root @ Qs[l - 1].T)
    weights.append(U @ root @ Qs[-1].T)
    return weights


def init_net(problem, depth, config, width=None):
    d1, d2 = problem.shape
    shapes = layer_shapes(d1, d2, depth, width)
    init = config.init
    if isinstance(init, Balanced):
        return LinearNet(balanced_init(shapes, init.scale, config.seed))
    if isinstance(init, Gaussian):
        std = default_std(depth, max(d1, d2)) if init.std is None else init.std
        return LinearNet(gaussian_init(shapes, std, config.seed))
    return LinearNet(gaussian_init(shapes, init.std, config.seed))


# --------------------------------------------------------------- gradients


def residuals(problem, E):
    return problem.labels - problem.operator.apply(E)


def net_loss(net, problem):
    r = residuals(problem, net.end_to_end())
    return 0.5 * float(r @ r)


def net_gradients(net, problem):
    """Loss and layer gradients ``[dL/dW_1, ..., dL/dW_L]``."""
    W = net.weights
    L = len(W)
    prefix = [None] * L  # prefix[l] = W_l ... W_1
    acc = W[0]
    prefix[0] = acc
    for l in range(1, L):
        acc = W[l] @ acc
        prefix[l] = acc
    r = residuals(problem, prefix[-1])
    R = problem.operator.adjoint(r)
    grads = [None] * L
    upstream = -R  # (W_L ... W_{l+1})^T (-R)
    for l in range(L - 1, -1, -1):
        grads[l] = upstream if l == 0 else upstream @ prefix[l - 1].T
        upstream = W[l].T @ upstream
    return 0.5 * float(r @ r), grads


def _update(params, grads, accumulators, opt):
    if isinstance(opt, GD):
        for P, g in zip(params, grads):
            P -= opt.lr * g
        return
    for P, g, v in zip(params, grads, accumulators):
        v *= opt.decay
        v += (1.0 - opt.decay) * g * g
        P -= opt.lr * g / (np.sqrt(v) + opt.eps)


def _eval_mse(estimate, problem):
    has_truth = (
        problem.true_weights is not None
        if isinstance(problem, SparseRegressionProblem)
        else problem.ground_truth is not None
    )
    return test_mse(estimate, problem) if has_truth else None


def train_linear_net(problem, net, config, callback=None):
    """Full-batch training of ``net`` on a sensing or completion problem.

    Returns
    -------
    net : LinearNet
        Trained copy; ``accumulators`` holds the RMSProp state.
    trace : Trace
        Rows every ``eval_every`` steps with ``step, loss, test_mse,
        balancedness``; ``trace.info`` has ``steps`` and ``stopped_early``.

    Raises
    ------
    Divergence
        If the loss exceeds ``1e12`` or becomes non-finite.
    """
    net = net.copy()
    if net.shape != tuple(problem.shape):
        raise ShapeMismatch(f"network maps to {net.shape}, problem is {problem.shape}")
    opt = config.optimizer
    if isinstance(opt, RMSProp) and net.accumulators is None:
        net.accumulators = [np.zeros_like(W) for W in net.weights]
    trace = Trace(NET_COLUMNS)
    stopped = False
    step = 0

    def record(step, loss):
        row = {"step": step, "loss": loss, "test_mse": _eval_mse(net.end_to_end(), problem)}
        if config.record_defects:
            row["balancedness"] = balancedness_defect(net)
        trace.append(row)
        return row

    for step in range(config.steps):
        loss, grads = net_gradients(net, problem)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise Divergence(f"loss {loss:.3e} at step {step}")
        if step % config.eval_every == 0:
            row = record(step, loss)
            if config.early_stop_mse is not None and row["test_mse"] is not None and row["test_mse"] < config.early_stop_mse:
                stopped = True
                break
        _update(net.weights, grads, net.accumulators, opt)
        if callback is not None:
            callback(step + 1, net)
    else:
        step = config.steps
        record(step, net_loss(net, problem))
    trace.info = {"steps": step, "stopped_early": stopped}
    return net, trace


# ------------------------------------------------------------- diagnostics


def balancedness_defect(net):
    """``max_l ||W_l W_l^T - W_{l+1}^T W_{l+1}||_F`` (0 for a single layer)."""
    W = net.weights
    if len(W) < 2:
        return 0.0
    return max(float(np.linalg.norm(W[l] @ W[l].T - W[l + 1].T @ W[l + 1])) for l in range(len(W) - 1))


def nfa_defect(net, layer):
    """Relative gap between ``W_l^T W_l`` and the layer AGOP raised to ``1/(L-l+1)``.

    ``layer`` is 1-based.  The AGOP of layer ``l`` is ``B^T B`` with
    ``B = W_L ... W_l``.
    """
    W = net.weights
    L = len(W)
    if not 1 <= layer <= L:
        raise ValueError(f"layer must lie in 1..{L}")
    cov = W[layer - 1].T @ W[layer - 1]
    B = _chain(W[layer - 1 :])
    agop = B.T @ B
    k = L - layer + 1
    target = agop if k == 1 else spectral_apply(agop, lambda lam: np.power(lam, 1.0 / k))
    den = np.linalg.norm(target)
    diff = np.linalg.norm(cov - target)
    if den == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / den)


# ---------------------------------------------------------- diagonal nets


def diag_gradients(params, X, y):
    """Loss ``0.5 * mean((X w_eff - y)^2)`` and gradients for ``w_eff = prod_l w_l``."""
    w_eff = np.prod(params, axis=0)
    r = X @ w_eff - y
    n = max(X.shape[0], 1)
    g_eff = X.T @ r / n
    grads = []
    for l in range(len(params)):
        others = np.prod(np.delete(params, l, axis=0), axis=0) if len(params) > 1 else 1.0
        grads.append(g_eff * others)
    return 0.5 * float(r @ r) / n, grads


def train_diag_net(problem, depth=2, config=None, callback=None):
    """Gradient descent on a linear diagonal network ``x^T (w_L * ... * w_1)``.

    Default settings: ``N(0, 1e-10)`` initialization, learning rate 0.1 and up
    to ``1e5`` steps.

    Returns
    -------
    w_eff : (d,) ndarray
    trace : Trace
    """
    config = config or TrainConfig(optimizer=GD(0.1), steps=100_000, init=DiagNearZero())
    X, y = problem.design, problem.labels
    d = X.shape[1]
    std = config.init.std if isinstance(config.init, (DiagNearZero, Gaussian)) and config.init.std else 1e-5
    rng = make_rng(config.seed, 13)
    params = std * rng.standard_normal((depth, d))
    acc = np.zeros_like(params)
    trace = Trace(DIAG_COLUMNS)
    stopped = False
    step = 0
    for step in range(config.steps):
        loss, grads = diag_gradients(params, X, y)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise Divergence(f"loss {loss:.3e} at step {step}")
        if step % config.eval_every == 0:
            mse = _eval_mse(np.prod(params, axis=0), problem)
            trace.append({"step": step, "loss": loss, "test_mse": mse})
            if config.early_stop_mse is not None and mse is not None and mse < config.early_stop_mse:
                stopped = True
                break
        _update(params, grads, acc, config.optimizer)
        if callback is not None:
            callback(step + 1, params)
    else:
        step = config.steps
        w = np.prod(params, axis=0)
        trace.append({"step": step, "loss": diag_gradients(params, X, y)[0], "test_mse": _eval_mse(w, problem)})
    trace.info = {"steps": step, "stopped_early": stopped}
    return np.prod(params, axis=0), trace


# -------------------------------------------------------------- checkpoint

_MAGIC = b"LNET"
_VERSION = 1


def save_checkpoint(net, path):
    """Binary dump: ``LNET``, version, depth, then per layer rows/cols and row-major float64.

    All integers are little-endian uint32 and all floats little-endian IEEE-754
    doubles.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, net.depth))
        for W in net.weights:
            fh.write(struct.pack("<II", *W.shape))
        for W in net.weights:
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: not a network checkpoint")
    try:
        version, depth = struct.unpack_from("<II", data, 4)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        shapes = [struct.unpack_from("<II", data, 12 + 8 * l) for l in range(depth)]
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    offset = 12 + 8 * depth
    expected = offset + 8 * sum(r * c for r, c in shapes)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    weights = []
    for r, c in shapes:
        W = np.frombuffer(data, dtype="<f8", count=r * c, offset=offset).reshape(r, c).astype(float)
        weights.append(W)
        offset += 8 * r * c
    return LinearNet(weights)
