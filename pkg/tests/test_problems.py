import numpy as np
import pytest
import scipy.stats

from linrfm.exceptions import FormatError, InvalidDims, MissingGroundTruth
from linrfm.problems import (
    CompletionProblem,
    SparseRegressionProblem,
    add_label_noise,
    degrees_of_freedom,
    gen_low_rank_completion,
    gen_sensing,
    gen_sparse_regression,
    load_problem,
    regression_test_design,
    save_problem,
    test_mse as mse_of,
)
from linrfm.spectral import singular_values


def test_sparse_regression_single_sample():
    p = gen_sparse_regression(1, 1, 1, seed=3)
    assert np.isfinite(p.design).all()
    assert 0.5 <= p.true_weights[0] <= 1.0
    np.testing.assert_allclose(p.labels, p.design @ p.true_weights)


def test_sparse_regression_support():
    p = gen_sparse_regression(50, 100, 5, seed=11)
    nz = np.flatnonzero(p.true_weights)
    assert nz.size == 5
    assert np.all((p.true_weights[nz] >= 0.5) & (p.true_weights[nz] <= 1.0))
    np.testing.assert_allclose(p.labels, p.design @ p.true_weights, rtol=1e-10)


def test_generators_are_deterministic():
    a, b = gen_sparse_regression(20, 30, 3, seed=4), gen_sparse_regression(20, 30, 3, seed=4)
    np.testing.assert_array_equal(a.design, b.design)
    np.testing.assert_array_equal(a.labels, b.labels)
    c, d = gen_low_rank_completion(10, 2, 40, seed=4), gen_low_rank_completion(10, 2, 40, seed=4)
    np.testing.assert_array_equal(c.ground_truth, d.ground_truth)
    np.testing.assert_array_equal(c.rows, d.rows)
    np.testing.assert_array_equal(c.cols, d.cols)


def test_invalid_dims():
    with pytest.raises(InvalidDims):
        gen_sparse_regression(5, 3, 4)
    with pytest.raises(InvalidDims):
        gen_low_rank_completion(3, 1, 10)
    with pytest.raises(InvalidDims):
        gen_low_rank_completion(3, 4, 2)
    with pytest.raises(InvalidDims):
        CompletionProblem(2, 2, [0, 0], [1, 1], [1.0, 2.0])


def test_fully_observed_small_completion():
    p = gen_low_rank_completion(2, 2, 4, seed=0)
    assert p.mask.all()
    np.testing.assert_allclose(np.linalg.norm(p.ground_truth), 2.0, rtol=1e-12)


def test_dof_sample_count():
    assert degrees_of_freedom(100, 5) == 975
    p = gen_low_rank_completion(100, 5, 975, seed=1)
    assert p.n_obs == 975
    np.testing.assert_allclose(np.linalg.norm(p.ground_truth), 100.0, rtol=1e-8)


@pytest.mark.parametrize("d,r", [(8, 1), (15, 3), (30, 7)])
def test_ground_truth_rank(d, r):
    s = singular_values(gen_low_rank_completion(d, r, d, seed=d + r).ground_truth)
    assert s[r - 1] > 1e-8
    if r < d:
        assert s[r] < 1e-8


def test_observations_match_ground_truth():
    p = gen_low_rank_completion(12, 2, 50, seed=2)
    np.testing.assert_array_equal(p.values, p.ground_truth[p.rows, p.cols])
    assert len(set(zip(p.rows.tolist(), p.cols.tolist()))) == 50


def test_sensing_labels_consistent():
    p = gen_sensing(4, 5, 2, 7, seed=3)
    y = [np.sum(A * p.ground_truth) for A in p.sensing_matrices]
    np.testing.assert_allclose(p.labels, y, rtol=1e-10)


def test_mask_sampling_is_uniform():
    counts = np.zeros(25)
    draws = 9000
    for seed in range(draws):
        p = gen_low_rank_completion(5, 1, 12, seed=seed)
        np.add.at(counts, p.rows * 5 + p.cols, 1)
    assert counts.sum() == draws * 12
    assert scipy.stats.chisquare(counts).pvalue > 1e-3


def test_noise():
    p = gen_low_rank_completion(10, 2, 30, seed=0)
    assert add_label_noise(p, 0.0, seed=1) is p
    a, b = add_label_noise(p, 0.1, seed=1), add_label_noise(p, 0.1, seed=1)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.noisy and not p.noisy
    np.testing.assert_array_equal(a.ground_truth, p.ground_truth)
    with pytest.raises(ValueError):
        add_label_noise(p, -1.0)


def test_noise_variance():
    p = gen_sparse_regression(10_000, 2, 1, seed=5)
    noisy = add_label_noise(p, 0.1, seed=6)
    var = np.var(noisy.labels - p.labels)
    assert abs(var - 0.01) < 0.2 * 0.01


def test_mse_completion():
    p = gen_low_rank_completion(10, 2, 40, seed=7)
    assert mse_of(p.ground_truth, p) == 0.0
    hidden = ~p.mask
    np.testing.assert_allclose(mse_of(np.zeros((10, 10)), p), np.mean(p.ground_truth[hidden] ** 2))


def test_mse_completion_matches_double_loop():
    p = gen_low_rank_completion(10, 3, 35, seed=8)
    est = np.random.default_rng(0).standard_normal((10, 10))
    observed = set(zip(p.rows.tolist(), p.cols.tolist()))
    total, count = 0.0, 0
    for i in range(10):
        for j in range(10):
            if (i, j) not in observed:
                total += (est[i, j] - p.ground_truth[i, j]) ** 2
                count += 1
    np.testing.assert_allclose(mse_of(est, p), total / count, rtol=1e-12)


def test_mse_regression_uses_held_out_design():
    p = gen_sparse_regression(20, 10, 2, seed=9)
    assert mse_of(p.true_weights, p) == 0.0
    Xt = regression_test_design(p, 500)
    w = np.zeros(10)
    np.testing.assert_allclose(mse_of(w, p, n_test=500), np.mean((Xt @ p.true_weights) ** 2))
    assert not np.array_equal(Xt[:20], p.design)


def test_mse_requires_ground_truth():
    p = CompletionProblem(2, 2, [0], [0], [1.0])
    with pytest.raises(MissingGroundTruth):
        mse_of(np.zeros((2, 2)), p)
    with pytest.raises(MissingGroundTruth):
        mse_of(np.zeros(2), SparseRegressionProblem(np.eye(2), np.ones(2)))


def _same(a, b):
    assert type(a) is type(b)
    for name in a.__dataclass_fields__:
        x, y = getattr(a, name), getattr(b, name)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            np.testing.assert_array_equal(x, y)
        else:
            assert x == y, name


@pytest.mark.parametrize(
    "problem",
    [
        gen_low_rank_completion(6, 2, 20, seed=1),
        add_label_noise(gen_low_rank_completion(5, 1, 9, seed=2), 0.3, seed=1),
        gen_sparse_regression(7, 9, 2, seed=3),
        gen_sensing(3, 4, 1, 5, seed=4),
    ],
)
def test_round_trip(problem, tmp_path):
    path = tmp_path / "p.txt"
    save_problem(problem, path)
    _same(problem, load_problem(path))


def test_truncated_file(tmp_path):
    path = tmp_path / "p.txt"
    save_problem(gen_low_rank_completion(6, 2, 20, seed=1), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:10]) + "\n")
    with pytest.raises(FormatError):
        load_problem(path)


def test_duplicate_and_out_of_range_entries(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("completion 2 2 2\n0 1 1.0\n0 1 2.0\n")
    with pytest.raises(FormatError):
        load_problem(path)
    path.write_text("completion 2 2 1\n0 5 1.0\n")
    with pytest.raises(FormatError):
        load_problem(path)
    path.write_text("matrix 2 2\n")
    with pytest.raises(FormatError):
        load_problem(path)
