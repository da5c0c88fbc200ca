"""Closed-form dynamics of lin-RFM with ``phi = identity`` on tiny completions.

With the observed entries re-imposed after every fit, the filter of a
two-column problem stays inside a low-dimensional family, and the whole run
collapses to a scalar or planar recursion:

* first row ``(a, b)`` observed and the second column observed elsewhere:
  ``M_t = [[a^2 + k_t^2 s, ab + k_t s], [ab + k_t s, b^2 + s]]``;
* first row observed, then ``c`` in column one and ``d`` in column two:
  ``M_t = [[a^2 + c^2 + y_t^2 d^2, ab + x_t c^2 + y_t d^2], [., b^2 + d^2 + x_t^2 c^2]]``;
* ``[[1, 0], [?, 1]]``: ``M_t = [[1 + a_t^2, a_t], [a_t, 1]]`` with ``|a_t|`` diverging.

Everything here is checked against the full iteration in :mod:`linrfm.rfm`.
The starting filter is written ``M0 = [[u, e], [e, v]]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from .exceptions import DegenerateInput, NumericFailure, PatternMismatch
from .problems import CompletionProblem
from .rfm import RfmConfig, initial_state, lin_rfm_run, lin_rfm_step
from .spectral import Identity, singular_values
from .trace import write_csv

#: Ridge for the fits.  The fully observed first row has a Gram block that
#: becomes singular as the filter approaches rank one; that row is overwritten
#: anyway, and the one-entry rows are perturbed only at the 1e-13 level.
ORACLE_RIDGE = 1e-12
FD_STEP = 1e-7
FD_RTOL = 1e-5
REPORT_COLUMNS = ("setting", "fixed_point", "derivative", "class", "algorithm_deviation")
GRID_COLUMNS = ("x", "y", "fx", "fy")


def _config(iters, fixed=True, tol=1e-10):
    return RfmConfig(
        phi=Identity(),
        ridge=ORACLE_RIDGE,
        max_iters=iters,
        tol=tol,
        fixed_iterations=fixed,
        record_objective=False,
    )


def _unpack_m0(M0):
    M0 = np.asarray(M0, dtype=float)
    if M0.shape != (2, 2):
        raise DegenerateInput(f"starting filter must be 2x2, got {M0.shape}")
    return M0[0, 0], 0.5 * (M0[0, 1] + M0[1, 0]), M0[1, 1]


# ----------------------------------------------------------------- problems


@dataclass(frozen=True)
class ColumnTwoObserved:
    """Rows below the first observe only column two; ``s`` is their sum of squares."""

    s: float


@dataclass(frozen=True)
class SplitColumns:
    """One more row observing ``c`` in column one, one observing ``d`` in column two."""

    c: float
    d: float


@dataclass(frozen=True)
class Mx2Problem:
    """First-row observations ``Y_11 = a``, ``Y_12 = b`` plus one of the two patterns."""

    a: float
    b: float
    pattern: Union[ColumnTwoObserved, SplitColumns]

    def to_completion(self):
        """The smallest completion problem realizing the pattern (2x2 or 3x2)."""
        a, b = self.a, self.b
        if isinstance(self.pattern, ColumnTwoObserved):
            return column_two_problem(a, b, [math.sqrt(self.pattern.s)])
        return split_columns_problem(a, b, self.pattern.c, self.pattern.d)


def column_two_problem(a, b, column_values):
    """``m x 2`` problem: row one fully observed, rows ``2..m`` observe column two.

    The hidden first column is filled with the rank-one completion
    ``Y_i1 = Y_i2 a / b`` so that test error is defined.
    """
    col = np.asarray(column_values, dtype=float).ravel()
    m = col.size + 1
    Y = np.empty((m, 2))
    Y[0] = (a, b)
    Y[1:, 1] = col
    Y[1:, 0] = col * a / b if b != 0 else 0.0
    mask = np.zeros((m, 2), bool)
    mask[0] = True
    mask[1:, 1] = True
    return CompletionProblem.from_mask(Y, mask)


def split_columns_problem(a, b, c, d):
    """``[[a, b], [c, ?], [?, d]]`` with the rank-one completion as ground truth."""
    Y = np.array([[a, b], [c, c * b / a], [d * a / b, d]])
    mask = np.array([[True, True], [True, False], [False, True]])
    return CompletionProblem.from_mask(Y, mask)


def zero_entry_problem():
    """``[[1, 0], [?, 1]]``; the hidden entry has no finite rank-one completion."""
    Y = np.array([[1.0, 0.0], [0.0, 1.0]])
    mask = np.array([[True, True], [False, True]])
    return CompletionProblem(2, 2, *np.nonzero(mask), Y[mask])


# -------------------------------------------------------------- fixed points


@dataclass(frozen=True)
class FixedPoint:
    location: float
    derivative: float
    classification: str


@dataclass(frozen=True)
class FixedPointReport:
    fixed_points: List[FixedPoint]

    def by_class(self, classification):
        return [fp for fp in self.fixed_points if fp.classification == classification]


def classify(derivative, atol=1e-12):
    mag = abs(derivative)
    if mag < 1 - atol:
        return "attractor"
    if mag > 1 + atol:
        return "repeller"
    return "neutral"


def _central_difference(f, x, h=FD_STEP):
    h = h * max(1.0, abs(x))
    return (f(x + h) - f(x - h)) / (2 * h)


# ---------------------------------------------------------- scalar recursion


def k_step(k, a, b, s):
    """``k' = (a^2 + b^2 + s + k^2 s)(ab + k s) / ((ab + k s)^2 + (b^2 + s)^2)``."""
    lin = a * b + k * s
    return (a * a + b * b + s + k * k * s) * lin / (lin * lin + (b * b + s) ** 2)


def k_step_derivative(k, a, b, s):
    lin = a * b + k * s
    num = (a * a + b * b + s + k * k * s) * lin
    den = lin * lin + (b * b + s) ** 2
    dnum = 2 * k * s * lin + (a * a + b * b + s + k * k * s) * s
    return dnum / den - num * 2 * s * lin / den**2


def k_initial(M0):
    """``k_1 = (u e + v e) / (e^2 + v^2)``: the first iterate from ``M0``."""
    u, e, v = _unpack_m0(M0)
    den = e * e + v * v
    if den == 0:
        raise DegenerateInput("second column of the starting filter is zero")
    return (u * e + v * e) / den


def k_repeller(a, b, s):
    """``-b (a^2 + b^2 + s) / (a s)``."""
    return -b * (a * a + b * b + s) / (a * s)


def k_fixed_points(a, b, s):
    """Finite fixed points ``a/b`` and :func:`k_repeller`, and the neutral points at infinity.

    Analytic derivatives ``s / (b^2 + s)`` and ``(a^2 + b^2 + s) / (b^2 + s)``
    are confirmed against central differences of :func:`k_step`.

    Raises
    ------
    DegenerateInput
        If ``a b s == 0``.
    NumericFailure
        If a closed-form derivative disagrees with its finite difference.
    """
    if a * b * s == 0:
        raise DegenerateInput("need a, b, s all nonzero")
    points = [
        (a / b, s / (b * b + s)),
        (k_repeller(a, b, s), (a * a + b * b + s) / (b * b + s)),
    ]
    out = []
    for x, deriv in points:
        if abs(k_step(x, a, b, s) - x) > 1e-9 * max(1.0, abs(x)):
            raise NumericFailure(f"{x!r} is not a fixed point of the recursion")
        fd = _central_difference(lambda z: k_step(z, a, b, s), x)
        if abs(fd - deriv) > FD_RTOL * max(abs(deriv), 1e-300):
            raise NumericFailure(f"derivative at {x!r}: closed form {deriv!r}, finite difference {fd!r}")
        out.append(FixedPoint(x, deriv, classify(deriv)))
    out.append(FixedPoint(math.inf, 1.0, "neutral"))
    out.append(FixedPoint(-math.inf, 1.0, "neutral"))
    return FixedPointReport(out)


def basin_predicate(a, b, s, M0):
    """True when the run from ``M0`` converges to the rank-one completion.

    Evaluates ``k_1 > -b (a^2 + b^2 + s) / (a s)``; meaningful when ``b / a > 0``.
    """
    if a * b * s == 0:
        raise DegenerateInput("need a, b, s all nonzero")
    if not b / a > 0:
        raise DegenerateInput("the basin condition assumes b / a > 0")
    return bool(k_initial(M0) > k_repeller(a, b, s))


# ------------------------------------------------------------ planar system


def _xy_parts(x, y, a, b, c, d):
    c2, d2 = c * c, d * d
    S = a * a + b * b + c2 + d2 + x * x * c2 + y * y * d2
    B = a * b + x * c2 + y * d2
    A = a * a + c2 + y * y * d2
    C = b * b + d2 + x * x * c2
    return S, B, A, C


def xy_step(x, y, a, b, c, d):
    """One step of the planar map: ``(S B / (B^2 + A^2), S B / (B^2 + C^2))``.

    ``A, B, C`` are the entries of the current filter and ``S = A + C``.
    """
    S, B, A, C = _xy_parts(x, y, a, b, c, d)
    return S * B / (B * B + A * A), S * B / (B * B + C * C)


def xy_jacobian(x, y, a, b, c, d):
    """Analytic 2x2 Jacobian of :func:`xy_step`."""
    c2, d2 = c * c, d * d
    S, B, A, C = _xy_parts(x, y, a, b, c, d)
    dS = np.array([2 * x * c2, 2 * y * d2])
    dB = np.array([c2, d2])
    dA = np.array([0.0, 2 * y * d2])
    dC = np.array([2 * x * c2, 0.0])
    rows = []
    for E, dE in ((A, dA), (C, dC)):
        Q = B * B + E * E
        dQ = 2 * B * dB + 2 * E * dE
        rows.append((dS * B + S * dB) / Q - S * B * dQ / (Q * Q))
    return np.array(rows)


def xy_fixed_point(a, b):
    """The rank-one completion in ``(x, y)`` coordinates: ``(b / a, a / b)``."""
    return b / a, a / b


def attractor_eigenvalue(a, b, c, d):
    """``(a^2 d^2 + b^2 c^2) / (a^2 b^2 + a^2 d^2 + b^2 c^2)``."""
    num = a * a * d * d + b * b * c * c
    return num / (a * a * b * b + num)


def top_eigenvalue(J):
    """Eigenvalue of largest modulus."""
    ev = np.linalg.eigvals(J)
    return ev[np.argmax(np.abs(ev))].real


def fd_jacobian(x, y, a, b, c, d, h=FD_STEP):
    J = np.empty((2, 2))
    for j, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
        up = np.array(xy_step(x + dx, y + dy, a, b, c, d))
        down = np.array(xy_step(x - dx, y - dy, a, b, c, d))
        J[:, j] = (up - down) / (2 * h)
    return J


def xy_initial(M0):
    """``x_1 = (u + v) e / (u^2 + e^2)`` and ``y_1 = (u + v) e / (v^2 + e^2)``."""
    u, e, v = _unpack_m0(M0)
    if u * u + e * e == 0 or v * v + e * e == 0:
        raise DegenerateInput("starting filter has a zero column")
    return (u + v) * e / (u * u + e * e), (u + v) * e / (v * v + e * e)


def xy_iterate(x, y, a, b, c, d, steps):
    """Forward orbit ``[(x, y), f(x, y), ...]`` of length ``steps + 1``."""
    out = [(x, y)]
    for _ in range(steps):
        x, y = xy_step(x, y, a, b, c, d)
        out.append((x, y))
    return out


def vector_field_grid(a, b, c, d, xlim=(-1.0, 3.0), ylim=(-1.0, 3.0), n=41):
    """Rows ``{x, y, fx, fy}`` with ``(fx, fy) = f(x, y) - (x, y)`` on an ``n x n`` grid."""
    rows = []
    for x in np.linspace(*xlim, n):
        for y in np.linspace(*ylim, n):
            fx, fy = xy_step(x, y, a, b, c, d)
            rows.append({"x": float(x), "y": float(y), "fx": float(fx - x), "fy": float(fy - y)})
    return rows


# ------------------------------------------------------------ divergence


def divergence_step(a):
    """``a' = (a^3 + 2a) / (a^2 + 1)``."""
    return (a**3 + 2 * a) / (a * a + 1)


def missing_entry(a):
    """Hidden entry of the fit through ``M_t``: ``a + a / (a^2 + 1)``."""
    return a + a / (a * a + 1)


# ----------------------------------------------------- algorithm agreement


def _rel_dev(closed, algo):
    closed = np.asarray(closed, dtype=float)
    algo = np.asarray(algo, dtype=float)
    return float(np.max(np.abs(closed - algo) / np.maximum(np.abs(closed), 1.0)))


def k_trace_check(a, b, column_values, M0, iters=15):
    """Closed-form ``k_1..k_iters`` against the full run on :func:`column_two_problem`.

    The run's ``k_t`` is read off the filter as ``(M_t[0, 1] - a b) / s``.

    Returns
    -------
    dict with ``closed``, ``algorithm``, ``max_deviation`` (relative, floored
    at 1) and ``final`` (the last completed matrix).
    """
    problem = column_two_problem(a, b, column_values)
    s = float(np.sum(np.square(column_values)))
    filters = []
    state, _ = lin_rfm_run(problem, _config(iters), init_M=M0, callback=lambda st: filters.append(st.M))
    algo = [(M[0, 1] - a * b) / s for M in filters]
    closed = [k_initial(M0)]
    for _ in range(iters - 1):
        closed.append(k_step(closed[-1], a, b, s))
    return {"closed": closed, "algorithm": algo, "max_deviation": _rel_dev(closed, algo), "final": state.Z}


def xy_trace_check(a, b, c, d, M0, iters=15):
    """Closed-form ``(x_t, y_t)`` against the full run on :func:`split_columns_problem`.

    The fit through ``M_t`` has second row ``c (1, x_{t+1})`` and third row
    ``d (y_{t+1}, 1)``, which is how the run's coordinates are extracted.
    """
    problem = split_columns_problem(a, b, c, d)
    cfg = _config(iters)
    state = initial_state(problem, cfg, M0)
    zs = [state.Z]
    for _ in range(iters - 1):
        state = lin_rfm_step(state, problem, cfg)
        zs.append(state.Z)
    algo = [(Z[1, 1] / c, Z[2, 0] / d) for Z in zs]
    closed = [xy_initial(M0)]
    for _ in range(iters - 1):
        closed.append(xy_step(*closed[-1], a, b, c, d))
    return {"closed": closed, "algorithm": algo, "max_deviation": _rel_dev(closed, algo), "final": state.Z}


def divergence_check(M0, threshold=1e3, max_iters=2_000_000):
    """Run the full iteration on :func:`zero_entry_problem` until ``|Z_21| > threshold``.

    Returns
    -------
    dict with ``iters`` (``None`` if the threshold was not reached), the final
    hidden entry ``entry``, and ``max_deviation`` between the run's ``a_t``
    (the filter's off-diagonal) and the closed-form recursion.
    """
    problem = zero_entry_problem()
    cfg = _config(1)
    state = initial_state(problem, cfg, M0)
    a = k_initial(M0)
    worst = 0.0
    for t in range(1, max_iters + 1):
        state = lin_rfm_step(state, problem, cfg)
        a_algo = float(state.M[0, 1])
        entry = float(state.Z[1, 0])
        scale = max(abs(a), 1.0)
        worst = max(worst, abs(a_algo - a) / scale, abs(entry - missing_entry(a)) / scale)
        if abs(entry) > threshold:
            return {"iters": t, "entry": entry, "max_deviation": worst}
        a = divergence_step(a)
    return {"iters": None, "entry": float(state.Z[1, 0]), "max_deviation": worst}


# ----------------------------------------------------------- recovery class


@dataclass(frozen=True)
class RecoveryVerdict:
    """``status`` is ``recovered``, ``not_recovered`` or ``inconclusive`` (no convergence)."""

    status: str
    relative_error: float
    iters: int
    rank: int


def _check_pattern(problem, rtol=1e-10):
    Y = problem.ground_truth
    if Y is None:
        raise PatternMismatch("the recovery check needs the ground truth")
    s = singular_values(Y)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    if r == 0:
        raise PatternMismatch("ground truth is zero")
    counts = np.bincount(problem.rows, minlength=problem.d1)
    full = int(np.sum(counts == problem.d2))
    if full != r:
        raise PatternMismatch(f"expected {r} fully observed rows, found {full}")
    if np.any((counts != problem.d2) & (counts != r)):
        raise PatternMismatch(f"every other row must have exactly {r} observations")
    zeros = np.sum(np.abs(Y) <= rtol * np.abs(Y).max(), axis=0)
    if np.any(zeros > r - 1):
        raise PatternMismatch(f"a column has more than {r - 1} zero entries")
    return r


def recovery_check(problem, max_iters=20_000, tol=1e-10, rtol=1e-6):
    """Run ``phi = identity`` lin-RFM on a pattern where convergence implies exact recovery.

    The pattern: rank ``r`` ground truth, ``r`` fully observed rows, exactly
    ``r`` observations in every other row, at most ``r - 1`` zeros per column.

    Raises
    ------
    PatternMismatch
        When the problem is outside the pattern.
    """
    r = _check_pattern(problem)
    state, _ = lin_rfm_run(problem, _config(max_iters, fixed=False, tol=tol))
    Y = problem.ground_truth
    err = float(np.linalg.norm(state.Z - Y) / np.linalg.norm(Y))
    if not state.converged:
        status = "inconclusive"
    else:
        status = "recovered" if err < rtol else "not_recovered"
    return RecoveryVerdict(status, err, state.t, r)


# ------------------------------------------------------------------ reports


def oracle_report(a=1.0, b=1.0, s=1.0, c=1.0, d=1.0, M0=None, iters=15):
    """Report rows for both two-column systems at one parameter setting."""
    M0 = np.array([[1.0, 0.1], [0.1, 1.0]]) if M0 is None else M0
    rows = []
    kdev = k_trace_check(a, b, [math.sqrt(s)], M0, iters)["max_deviation"]
    setting = f"column_two a={a:g} b={b:g} s={s:g}"
    for fp in k_fixed_points(a, b, s).fixed_points:
        rows.append({
            "setting": setting,
            "fixed_point": fp.location,
            "derivative": fp.derivative,
            "class": fp.classification,
            "algorithm_deviation": kdev,
        })
    xydev = xy_trace_check(a, b, c, d, M0, iters)["max_deviation"]
    lam = top_eigenvalue(xy_jacobian(*xy_fixed_point(a, b), a, b, c, d))
    rows.append({
        "setting": f"split_columns a={a:g} b={b:g} c={c:g} d={d:g}",
        "fixed_point": "({:.17g}, {:.17g})".format(*xy_fixed_point(a, b)),
        "derivative": lam,
        "class": classify(lam),
        "algorithm_deviation": xydev,
    })
    return rows


def write_report(rows, fh):
    write_csv(rows, REPORT_COLUMNS, fh)


def write_grid(rows, fh):
    write_csv(rows, GRID_COLUMNS, fh)


__all__ = [
    "ORACLE_RIDGE",
    "ColumnTwoObserved",
    "SplitColumns",
    "Mx2Problem",
    "column_two_problem",
    "split_columns_problem",
    "zero_entry_problem",
    "FixedPoint",
    "FixedPointReport",
    "classify",
    "k_step",
    "k_step_derivative",
    "k_initial",
    "k_repeller",
    "k_fixed_points",
    "basin_predicate",
    "xy_step",
    "xy_jacobian",
    "xy_fixed_point",
    "attractor_eigenvalue",
    "top_eigenvalue",
    "fd_jacobian",
    "xy_initial",
    "xy_iterate",
    "vector_field_grid",
    "divergence_step",
    "missing_entry",
    "k_trace_check",
    "xy_trace_check",
    "divergence_check",
    "RecoveryVerdict",
    "recovery_check",
    "oracle_report",
    "write_report",
    "write_grid",
]
