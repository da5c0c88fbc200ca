"""Problem containers, synthetic generators, metrics and the text file format.

File format (UTF-8, 0-based indices, floats written with 17 significant digits)::

    completion d1 d2 n_obs          |  regression n d         |  sensing n d1 d2
    # meta noisy=0 rank=5 seed=7    |  # meta ...             |  # meta ...
    i j value      (n_obs lines)    |  i j X_ij  (n*d lines)  |  k i j A_kij (n*d1*d2 lines)
    # ground_truth (optional)       |  # labels  (n lines)    |  # labels (n lines)
    <d1 rows of d2 values>          |  # true_weights (opt.)  |  # ground_truth (optional)
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import FormatError, InvalidDims, MissingGroundTruth
from .operators import CompletionOperator, DenseSensingOperator

DEFAULT_TEST_SIZE = 10_000


def make_rng(seed, *tags):
    """Generator seeded from ``seed`` plus optional integer stream tags."""
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


@dataclass(frozen=True, eq=False)
class CompletionProblem:
    d1: int
    d2: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    rank_hint: Optional[int] = None
    noisy: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.intp).ravel()
        cols = np.asarray(self.cols, dtype=np.intp).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise InvalidDims("rows, cols and values must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= self.d1 or cols.min() < 0 or cols.max() >= self.d2):
            raise InvalidDims("observation index out of range")
        flat = rows * self.d2 + cols
        if np.unique(flat).size != flat.size:
            raise InvalidDims("duplicate observation coordinates")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth, dtype=float)
            if gt.shape != (self.d1, self.d2):
                raise InvalidDims(f"ground truth shape {gt.shape} != {(self.d1, self.d2)}")
            object.__setattr__(self, "ground_truth", gt)

    @property
    def shape(self):
        return (self.d1, self.d2)

    @property
    def n_obs(self):
        return self.rows.size

    @property
    def labels(self):
        return self.values

    @property
    def operator(self):
        return CompletionOperator(self.rows, self.cols, self.shape)

    @property
    def mask(self):
        m = np.zeros(self.shape, dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def observed_matrix(self):
        Z = np.zeros(self.shape)
        Z[self.rows, self.cols] = self.values
        return Z

    @property
    def observations(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    @classmethod
    def from_mask(cls, Y, mask, **kwargs):
        """Observe ``Y`` on a boolean mask (``Y`` becomes the ground truth)."""
        Y = np.asarray(Y, dtype=float)
        rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
        return cls(Y.shape[0], Y.shape[1], rows, cols, Y[rows, cols], ground_truth=Y, **kwargs)


@dataclass(frozen=True, eq=False)
class SensingProblem:
    sensing_matrices: np.ndarray
    labels: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    noisy: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        A = np.asarray(self.sensing_matrices, dtype=float)
        y = np.asarray(self.labels, dtype=float).ravel()
        if A.ndim != 3 or A.shape[0] != y.size:
            raise InvalidDims("sensing matrices must be (n, d1, d2) with n labels")
        object.__setattr__(self, "sensing_matrices", A)
        object.__setattr__(self, "labels", y)
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth", np.asarray(self.ground_truth, dtype=float))

    @property
    def shape(self):
        return self.sensing_matrices.shape[1:]

    @property
    def n_obs(self):
        return self.labels.size

    @property
    def operator(self):
        return DenseSensingOperator(self.sensing_matrices)


@dataclass(frozen=True, eq=False)
class SparseRegressionProblem:
    design: np.ndarray
    labels: np.ndarray
    true_weights: Optional[np.ndarray] = None
    sparsity: Optional[int] = None
    noisy: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.asarray(self.labels, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise InvalidDims("design rows must match number of labels")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "labels", y)
        if self.true_weights is not None:
            w = np.asarray(self.true_weights, dtype=float).ravel()
            if w.size != X.shape[1]:
                raise InvalidDims("true weights length must match design columns")
            object.__setattr__(self, "true_weights", w)

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def d(self):
        return self.design.shape[1]

    def as_sensing(self):
        """Diagonal-matrix embedding: ``A_i = diag(x_i)``, ``Y = diag(w*)``."""
        A = np.stack([np.diag(x) for x in self.design]) if self.n else np.zeros((0, self.d, self.d))
        gt = None if self.true_weights is None else np.diag(self.true_weights)
        return SensingProblem(A, self.labels, ground_truth=gt, noisy=self.noisy)


# ---------------------------------------------------------------- generators


def gen_sparse_regression(n, d, r, seed=None):
    """Gaussian design, ``w*_i ~ U[0.5, 1]`` on the first ``r`` coordinates, ``y = X w*``."""
    if not (1 <= r <= d) or n < 1:
        raise InvalidDims(f"need 1 <= r <= d and n >= 1 (got n={n}, d={d}, r={r})")
    rng = make_rng(seed, 0)
    X = rng.standard_normal((n, d))
    w = np.zeros(d)
    w[:r] = rng.uniform(0.5, 1.0, size=r)
    return SparseRegressionProblem(X, X @ w, true_weights=w, sparsity=r, seed=seed)


def regression_test_design(problem, n_test=DEFAULT_TEST_SIZE):
    """Held-out design regenerated from the problem seed on a separate stream."""
    rng = make_rng(problem.seed, 1)
    return rng.standard_normal((n_test, problem.d))


def low_rank_matrix(d1, d2, r, rng):
    U = rng.standard_normal((d1, r))
    V = rng.standard_normal((d2, r))
    Y = U @ V.T
    return (max(d1, d2) / np.linalg.norm(Y)) * Y


def gen_low_rank_completion(d, r, n_obs, seed=None, d2=None):
    """Rank-``r`` ``Y = (d / ||U V^T||_F) U V^T`` with ``n_obs`` entries sampled uniformly without replacement."""
    d1 = d
    d2 = d if d2 is None else d2
    if not (1 <= r <= min(d1, d2)):
        raise InvalidDims(f"need 1 <= r <= d (got r={r})")
    if not (0 <= n_obs <= d1 * d2):
        raise InvalidDims(f"need 0 <= n_obs <= {d1 * d2} (got {n_obs})")
    rng = make_rng(seed, 0)
    Y = low_rank_matrix(d1, d2, r, rng)
    flat = np.sort(rng.choice(d1 * d2, size=n_obs, replace=False))
    rows, cols = np.divmod(flat, d2)
    return CompletionProblem(d1, d2, rows, cols, Y[rows, cols], ground_truth=Y, rank_hint=r, seed=seed)


def gen_sensing(d1, d2, r, n, seed=None, normalize=False):
    """Gaussian sensing matrices observing a rank-``r`` target.

    By default the entries of each ``A_i`` are standard normal and
    ``||Y||_F = max(d1, d2)``.  With ``normalize=True`` the entries have variance
    ``1 / (d1 d2)`` (so ``E ||A_i||_F^2 = 1``) and ``||Y||_F = 1``; the random
    draws are the same.
    """
    rng = make_rng(seed, 0)
    Y = low_rank_matrix(d1, d2, r, rng)
    A = rng.standard_normal((n, d1, d2))
    if normalize:
        Y = Y / np.linalg.norm(Y)
        A = A / np.sqrt(d1 * d2)
    return SensingProblem(A, np.einsum("kij,ij->k", A, Y), ground_truth=Y, seed=seed)


def degrees_of_freedom(d, r, d2=None):
    """``d1 r + d2 r - r^2``; equals ``2 d r - r^2`` for square matrices."""
    d2 = d if d2 is None else d2
    return d * r + d2 * r - r * r


def add_label_noise(problem, sigma, seed=None):
    """Add i.i.d. ``N(0, sigma^2)`` noise to the training observations only."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return problem
    rng = make_rng(seed, 2)
    if isinstance(problem, CompletionProblem):
        return replace(problem, values=problem.values + sigma * rng.standard_normal(problem.n_obs), noisy=True)
    return replace(problem, labels=problem.labels + sigma * rng.standard_normal(problem.labels.size), noisy=True)


# ------------------------------------------------------------------ metrics


def test_mse(estimate, problem, n_test=DEFAULT_TEST_SIZE):
    """Test mean squared error against the clean ground truth.

    Completion: mean over unobserved coordinates (0.0 if every entry is
    observed).  Regression: mean of ``(x^T w_hat - x^T w*)^2`` over a held-out
    Gaussian design.  Sensing: mean squared entrywise error over the matrix.
    """
    estimate = np.asarray(estimate, dtype=float)
    if isinstance(problem, CompletionProblem):
        if problem.ground_truth is None:
            raise MissingGroundTruth("completion problem has no ground truth")
        hidden = ~problem.mask
        if not hidden.any():
            return 0.0
        return float(np.mean((estimate[hidden] - problem.ground_truth[hidden]) ** 2))
    if isinstance(problem, SparseRegressionProblem):
        if problem.true_weights is None:
            raise MissingGroundTruth("regression problem has no true weights")
        Xt = regression_test_design(problem, n_test)
        return float(np.mean((Xt @ (estimate.ravel() - problem.true_weights)) ** 2))
    if problem.ground_truth is None:
        raise MissingGroundTruth("sensing problem has no ground truth")
    return float(np.mean((estimate - problem.ground_truth) ** 2))


# not a test case, despite the name
test_mse.__test__ = False


# ---------------------------------------------------------------------- I/O


def _meta_line(problem):
    items = {"noisy": int(bool(problem.noisy))}
    rank = getattr(problem, "rank_hint", None) or getattr(problem, "sparsity", None)
    if rank is not None:
        items["rank"] = int(rank)
    if problem.seed is not None:
        items["seed"] = int(problem.seed)
    return "# meta " + " ".join(f"{k}={v}" for k, v in items.items())


def save_problem(problem, path):
    f17 = "{:.17g}".format
    lines = []
    if isinstance(problem, CompletionProblem):
        lines.append(f"completion {problem.d1} {problem.d2} {problem.n_obs}")
        lines.append(_meta_line(problem))
        lines += [f"{i} {j} {f17(v)}" for i, j, v in zip(problem.rows, problem.cols, problem.values)]
        if problem.ground_truth is not None:
            lines.append("# ground_truth")
            lines += [" ".join(map(f17, row)) for row in problem.ground_truth]
    elif isinstance(problem, SparseRegressionProblem):
        n, d = problem.design.shape
        lines.append(f"regression {n} {d}")
        lines.append(_meta_line(problem))
        lines += [f"{i} {j} {f17(problem.design[i, j])}" for i in range(n) for j in range(d)]
        lines.append("# labels")
        lines += [f17(v) for v in problem.labels]
        if problem.true_weights is not None:
            lines.append("# true_weights")
            lines += [f17(v) for v in problem.true_weights]
    elif isinstance(problem, SensingProblem):
        n = problem.n_obs
        d1, d2 = problem.shape
        lines.append(f"sensing {n} {d1} {d2}")
        lines.append(_meta_line(problem))
        A = problem.sensing_matrices
        lines += [f"{k} {i} {j} {f17(A[k, i, j])}" for k in range(n) for i in range(d1) for j in range(d2)]
        lines.append("# labels")
        lines += [f17(v) for v in problem.labels]
        if problem.ground_truth is not None:
            lines.append("# ground_truth")
            lines += [" ".join(map(f17, row)) for row in problem.ground_truth]
    else:
        raise TypeError(f"cannot save {type(problem).__name__}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Reader:
    def __init__(self, text, path):
        self.lines = [ln.strip() for ln in text.splitlines()]
        self.lines = [ln for ln in self.lines if ln]
        self.pos = 0
        self.path = path

    def error(self, msg):
        return FormatError(f"{self.path}: line {self.pos + 1}: {msg}")

    def next(self):
        if self.pos >= len(self.lines):
            raise FormatError(f"{self.path}: unexpected end of file (truncated?)")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def peek(self):
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def section(self, name):
        if self.peek() == f"# {name}":
            self.pos += 1
            return True
        return False

    def numbers(self, count, convert=float):
        line = self.next()
        parts = line.split()
        if len(parts) != count:
            raise self.error(f"expected {count} fields, got {len(parts)}: {line!r}")
        try:
            return [convert(p) for p in parts]
        except ValueError as exc:
            raise self.error(str(exc)) from exc

    def rows(self, count, width):
        return np.array([self.numbers(width) for _ in range(count)], dtype=float).reshape(count, width)

    def meta(self):
        out = {}
        if self.peek() and self.peek().startswith("# meta"):
            for item in self.next().split()[2:]:
                key, _, value = item.partition("=")
                out[key] = int(value)
        return out


def _index_entries(reader, count, bounds):
    idx = np.empty((count, len(bounds)), dtype=np.intp)
    vals = np.empty(count)
    for k in range(count):
        fields = reader.numbers(len(bounds) + 1, str)
        try:
            ind = [int(x) for x in fields[:-1]]
            vals[k] = float(fields[-1])
        except ValueError as exc:
            raise reader.error(str(exc)) from exc
        for v, b in zip(ind, bounds):
            if not 0 <= v < b:
                raise reader.error(f"index {v} out of range [0, {b})")
        idx[k] = ind
    return idx, vals


def load_problem(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text") from exc
    rd = _Reader(text, path)
    header = rd.next().split()
    try:
        kind, dims = header[0], [int(x) for x in header[1:]]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header {header!r}") from exc
    expected = {"completion": 3, "regression": 2, "sensing": 3}
    if kind not in expected or len(dims) != expected[kind] or min(dims, default=0) < 0:
        raise FormatError(f"{path}: malformed header {' '.join(header)!r}")
    meta = rd.meta()
    noisy, seed = bool(meta.get("noisy", 0)), meta.get("seed")
    if kind == "completion":
        d1, d2, n_obs = dims
        idx, vals = _index_entries(rd, n_obs, (d1, d2))
        flat = idx[:, 0] * d2 + idx[:, 1]
        if np.unique(flat).size != flat.size:
            raise FormatError(f"{path}: duplicate observation coordinates")
        gt = rd.rows(d1, d2) if rd.section("ground_truth") else None
        problem = CompletionProblem(d1, d2, idx[:, 0], idx[:, 1], vals, ground_truth=gt,
                                    rank_hint=meta.get("rank"), noisy=noisy, seed=seed)
    elif kind == "regression":
        n, d = dims
        idx, vals = _index_entries(rd, n * d, (n, d))
        X = np.full((n, d), np.nan)
        X[idx[:, 0], idx[:, 1]] = vals
        if np.isnan(X).any():
            raise FormatError(f"{path}: duplicate or missing design entries")
        if not rd.section("labels"):
            raise rd.error("missing '# labels' section")
        y = rd.rows(n, 1).ravel()
        w = rd.rows(d, 1).ravel() if rd.section("true_weights") else None
        problem = SparseRegressionProblem(X, y, true_weights=w, sparsity=meta.get("rank"), noisy=noisy, seed=seed)
    else:
        n, d1, d2 = dims
        idx, vals = _index_entries(rd, n * d1 * d2, (n, d1, d2))
        A = np.full((n, d1, d2), np.nan)
        A[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
        if np.isnan(A).any():
            raise FormatError(f"{path}: duplicate or missing sensing entries")
        if not rd.section("labels"):
            raise rd.error("missing '# labels' section")
        y = rd.rows(n, 1).ravel()
        gt = rd.rows(d1, d2) if rd.section("ground_truth") else None
        problem = SensingProblem(A, y, ground_truth=gt, noisy=noisy, seed=seed)
    if rd.peek() is not None:
        raise rd.error(f"unexpected trailing content {rd.peek()!r}")
    return problem
