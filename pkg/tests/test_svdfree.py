import time

import numpy as np
import pytest

from linrfm.exceptions import SingularRowSystem
from linrfm.problems import CompletionProblem, gen_low_rank_completion
from linrfm.rfm import RfmConfig, filtered_interpolate, lin_rfm_run
from linrfm.spectral import HalfIntegerPower
from linrfm.svdfree import (
    RIDGE_GRID,
    RowLayout,
    SvdFreeState,
    msq_update,
    reconstruct,
    solve_gamma,
    svdfree_run,
)


def random_pd(d, rng):
    B = rng.standard_normal((d, d))
    return B @ B.T + 0.1 * np.eye(d)


def state(Msq, k=1, gamma=None):
    return SvdFreeState(Msq=Msq, gamma=gamma, t=0, alpha_numerator=k)


def test_identity_filter_gives_observed_values():
    p = gen_low_rank_completion(6, 2, 20, seed=0)
    gamma = solve_gamma(state(np.eye(6)), p, ridge=0.0)
    np.testing.assert_allclose(gamma, p.values, rtol=1e-12)


def test_single_observation_per_row():
    rng = np.random.default_rng(1)
    Msq = random_pd(4, rng)
    p = CompletionProblem(4, 4, [0, 1, 2, 3], [2, 0, 3, 3], [1.0, -2.0, 0.5, 3.0])
    gamma = solve_gamma(state(Msq), p, ridge=0.1)
    np.testing.assert_allclose(gamma, p.values / (np.diag(Msq)[p.cols] + 0.1), rtol=1e-12)


@pytest.mark.parametrize("ridge", [0.0, 1e-3])
def test_gamma_matches_full_gram_system(ridge):
    rng = np.random.default_rng(2)
    p = gen_low_rank_completion(8, 2, 20, seed=3)
    Msq = random_pd(8, rng)
    F = np.linalg.cholesky(Msq)  # F F^T = Msq
    _, expected = filtered_interpolate(p.operator, p.values, F, ridge, FFt=Msq)
    np.testing.assert_allclose(solve_gamma(state(Msq), p, ridge), expected, rtol=1e-9, atol=1e-12)


def test_singular_row_system():
    p = CompletionProblem(2, 3, [0, 0, 1], [0, 1, 2], [1.0, 2.0, 3.0])
    Msq = np.ones((3, 3))
    with pytest.raises(SingularRowSystem) as info:
        solve_gamma(state(Msq), p, ridge=0.0)
    assert info.value.row == 0
    gamma = solve_gamma(state(Msq), p, ridge=0.0, singular="pinv")
    assert np.all(np.isfinite(gamma))


def test_reconstruct_fully_observed():
    Y = np.random.default_rng(4).standard_normal((3, 3))
    p = CompletionProblem.from_mask(Y, np.ones((3, 3), bool))
    s = state(np.eye(3))
    s = SvdFreeState(s.Msq, solve_gamma(s, p, 0.0), 0, 1)
    np.testing.assert_allclose(reconstruct(s, p, enforce=False), Y, rtol=1e-12)


def test_empty_row_reconstructs_to_zero():
    p = CompletionProblem(3, 3, [0, 0, 2], [0, 1, 2], [1.0, 2.0, 3.0])
    rng = np.random.default_rng(5)
    s = state(random_pd(3, rng))
    s = SvdFreeState(s.Msq, solve_gamma(s, p, 1e-3), 0, 1)
    Z = reconstruct(s, p, enforce=False)
    assert np.all(Z[1] == 0.0)


def test_observed_entries_consistent():
    p = gen_low_rank_completion(10, 2, 45, seed=6)
    rng = np.random.default_rng(7)
    s = state(random_pd(10, rng))
    s = SvdFreeState(s.Msq, solve_gamma(s, p, 0.0), 0, 1)
    np.testing.assert_allclose(reconstruct(s, p, enforce=False)[p.rows, p.cols], p.values, rtol=1e-8, atol=1e-8)
    assert np.array_equal(reconstruct(s, p)[p.rows, p.cols], p.values)


def test_update_half_power():
    rng = np.random.default_rng(8)
    p = gen_low_rank_completion(6, 2, 18, seed=9)
    Msq = random_pd(6, rng)
    gamma = rng.standard_normal(p.n_obs)
    G = np.zeros((6, 6))
    G[p.rows, p.cols] = gamma
    new = msq_update(state(Msq, 1, gamma), p)
    np.testing.assert_allclose(new.Msq, Msq @ G.T @ G @ Msq, rtol=1e-10)


def test_update_zero_gamma():
    p = gen_low_rank_completion(4, 1, 5, seed=0)
    new = msq_update(state(np.eye(4), 1, np.zeros(5)), p)
    assert np.all(new.Msq == 0.0)


def test_update_integer_power_tracks_filter():
    # k = 2: tracked matrix is M itself and M_{t+1} = M W^T W M with W = A^*(gamma) M
    rng = np.random.default_rng(10)
    p = gen_low_rank_completion(6, 2, 18, seed=11)
    M = random_pd(6, rng)
    gamma = rng.standard_normal(p.n_obs)
    G = np.zeros((6, 6))
    G[p.rows, p.cols] = gamma
    W = G @ M
    new = msq_update(state(M, 2, gamma), p)
    np.testing.assert_allclose(new.Msq, M @ W.T @ W @ M, rtol=1e-8)


def _paths(p, k, ridge, iters=20):
    fast = []
    svdfree_run(p, k, ridge=ridge, max_iters=iters, tol=1e-300, callback=lambda s, Z: fast.append((Z, s.filter_sq())))
    slow = []
    cfg = RfmConfig(phi=HalfIntegerPower(k), ridge=ridge, max_iters=iters, fixed_iterations=True, record_objective=False)
    lin_rfm_run(p, cfg, callback=lambda s: slow.append((s.Z, s.M @ s.M)))
    return fast[1:], slow


@pytest.mark.parametrize("k,n_obs", [(1, 200), (2, 200), (3, 450)])
def test_matches_svd_path(k, n_obs):
    for seed in range(3):
        p = gen_low_rank_completion(30, 2, n_obs, seed=seed)
        for (Zf, Mf), (Zs, Ms) in zip(*_paths(p, k, 1e-2)):
            assert np.linalg.norm(Zf - Zs) <= 1e-6 * np.linalg.norm(Zs)
            assert np.linalg.norm(Mf - Ms) <= 1e-6 * np.linalg.norm(Ms)


def test_run_recovers_low_rank():
    # d = 100, r = 5, n = 1500: about 1.5x the degrees of freedom
    p = gen_low_rank_completion(100, 5, 1500, seed=0)
    best = np.inf
    for ridge in RIDGE_GRID:
        _, trace = svdfree_run(p, 1, ridge=ridge, max_iters=10_000, tol=1e-12, timing=False, target_mse=1e-3)
        best = min(best, trace[-1]["test_mse"])
        if best < 1e-3:
            break
    assert best < 1e-3


def test_empty_problem():
    p = CompletionProblem(3, 4, [], [], [], ground_truth=np.ones((3, 4)))
    Z, trace = svdfree_run(p)
    assert np.all(Z == 0) and trace.info["converged"] and trace.info["n_iter"] == 0


def test_trace_columns_and_timing_flag():
    p = gen_low_rank_completion(10, 2, 50, seed=1)
    _, trace = svdfree_run(p, max_iters=5, timing=False)
    assert trace.columns == ["iter", "wall_ms", "recon_change", "test_mse"]
    assert all(r["wall_ms"] == 0.0 for r in trace)
    assert trace.to_csv() == svdfree_run(p, max_iters=5, timing=False)[1].to_csv()


def test_ridge_grid():
    assert RIDGE_GRID == (5e-2, 3e-2, 1e-2, 5e-3, 1e-3, 5e-4, 1e-4)


def test_batched_buffers_stay_small():
    p = gen_low_rank_completion(40, 2, 900, seed=2)
    layout = RowLayout(p)
    from linrfm.svdfree import _chunk_size

    assert _chunk_size(layout) * layout.width**2 <= max(40 * 40, layout.width**2)
    assert layout.pad_cols.size <= 40 * 40


def test_row_cost_scales_quadratically():
    rng = np.random.default_rng(0)
    d1, d2 = 2000, 2048
    U = rng.standard_normal((d2, 4))
    Msq = np.eye(d2) + U @ U.T / d2
    counts = [8, 16, 32, 64]
    times = []
    for n_i in counts:
        cols = np.concatenate([np.sort(rng.choice(d2, n_i, replace=False)) for _ in range(d1)])
        p = CompletionProblem(d1, d2, np.repeat(np.arange(d1), n_i), cols, rng.standard_normal(d1 * n_i))
        layout = RowLayout(p)
        s = state(Msq)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            solve_gamma(s, p, 1e-3, layout=layout)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    slope = np.polyfit(np.log(counts), np.log(times), 1)[0]
    assert 1.7 <= slope <= 2.3, slope
