import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from linrfm.baselines import GD, DiagNearZero, TrainConfig, l1_min, nuclear_norm_min, train_diag_net
from linrfm.estimators import (
    DeepRFMCompletion,
    DiagNetRegressor,
    DiagRFMRegressor,
    IRLSCompletion,
    L1Regressor,
    LinearNetCompletion,
    LinRFMCompletion,
    NuclearNormCompletion,
    SvdFreeCompletion,
)
from linrfm.exceptions import InvalidDims
from linrfm.irls import IrlsConfig, irls_run
from linrfm.problems import gen_low_rank_completion, gen_sparse_regression
from linrfm.rfm import RfmConfig, diag_rfm_run, lin_rfm_run
from linrfm.spectral import Power
from linrfm.svdfree import svdfree_run


@pytest.fixture(scope="module")
def completion():
    return gen_low_rank_completion(15, 2, 150, seed=4)


def coords(p):
    return np.column_stack([p.rows, p.cols])


def hidden(p):
    return np.argwhere(~p.mask)


def test_lin_rfm_wraps_functional_run(completion):
    est = LinRFMCompletion(ridge=1e-2, max_iters=300).fit(coords(completion), completion.values)
    cfg = RfmConfig(phi=Power(0.5, 0.0), ridge=1e-2, max_iters=300, record_objective=False)
    state, _ = lin_rfm_run(completion, cfg)
    np.testing.assert_array_equal(est.completion_, state.Z)
    np.testing.assert_array_equal(est.filter_, state.M)
    assert est.n_iter_ == state.t and est.shape_ == (15, 15)


def test_svd_free_wraps_functional_run(completion):
    est = SvdFreeCompletion(ridge=1e-2, max_iters=200).fit(completion)
    Z, _ = svdfree_run(completion, 1, ridge=1e-2, max_iters=200, track_test_mse=False, timing=False)
    np.testing.assert_array_equal(est.completion_, Z)
    h = hidden(completion)
    truth = completion.ground_truth[h[:, 0], h[:, 1]]
    assert np.mean((est.predict(h) - truth) ** 2) < 1e-3


def test_irls_and_nuclear_wrap_functional_runs(completion):
    est = IRLSCompletion(p=0.5, max_iters=20).fit(completion)
    state, _ = irls_run(completion, IrlsConfig(p=0.5, max_iters=20))
    np.testing.assert_array_equal(est.completion_, state.X)
    nuc = NuclearNormCompletion().fit(completion)
    np.testing.assert_array_equal(nuc.completion_, nuclear_norm_min(completion))


def test_deep_and_net_estimators_run(completion):
    deep = DeepRFMCompletion(max_iters=20).fit(completion)
    assert deep.completion_.shape == (15, 15) and len(deep.filters_) == 2
    net = LinearNetCompletion(steps=50, random_state=0).fit(completion)
    again = LinearNetCompletion(steps=50, random_state=0).fit(completion)
    np.testing.assert_array_equal(net.completion_, again.completion_)
    with pytest.raises(ValueError):
        LinearNetCompletion(optimizer="adam", steps=5).fit(completion)


def test_problem_and_coordinates_agree(completion):
    a = SvdFreeCompletion(max_iters=30).fit(completion)
    b = SvdFreeCompletion(max_iters=30, shape=(15, 15)).fit(coords(completion), completion.values)
    np.testing.assert_array_equal(a.completion_, b.completion_)
    assert a.predict(coords(completion)) == pytest.approx(completion.values, abs=1e-12)


def test_shape_inferred_from_coordinates():
    est = NuclearNormCompletion().fit(np.array([[0, 0], [2, 1]]), [1.0, 2.0])
    assert est.shape_ == (3, 2)


def test_coordinate_validation(completion):
    est = SvdFreeCompletion(max_iters=5)
    with pytest.raises(NotFittedError):
        est.predict([[0, 0]])
    with pytest.raises(InvalidDims):
        est.fit(np.ones((3, 3), dtype=int), np.ones(3))
    with pytest.raises(InvalidDims):
        est.fit([[0.5, 1.0]], [1.0])
    with pytest.raises(InvalidDims):
        est.fit([[0, 1], [1, 0]], [1.0])
    with pytest.raises(InvalidDims):
        est.fit([[-1, 0]], [1.0])
    with pytest.raises(InvalidDims):
        SvdFreeCompletion(shape=(2, 2)).fit([[2, 0]], [1.0])
    with pytest.raises(ValueError):
        est.fit(completion, completion.values)
    est.fit(completion)
    with pytest.raises(InvalidDims):
        est.predict([[15, 0]])


def test_params_and_clone():
    est = LinRFMCompletion(alpha=0.25, ridge=1e-3)
    assert est.get_params()["alpha"] == 0.25
    twin = clone(est).set_params(alpha=1.0)
    assert twin.alpha == 1.0 and est.alpha == 0.25


# --------------------------------------------------------------- regression


@pytest.fixture(scope="module")
def sparse():
    return gen_sparse_regression(60, 100, 3, seed=2)


def test_diag_rfm_regressor(sparse):
    est = DiagRFMRegressor().fit(sparse.design, sparse.labels)
    beta, _ = diag_rfm_run(sparse, RfmConfig(phi=Power(0.25, 0.0), ridge=1e-10, max_iters=1000, record_objective=False))
    np.testing.assert_array_equal(est.coef_, beta)
    np.testing.assert_allclose(est.coef_, sparse.true_weights, atol=1e-6)
    np.testing.assert_allclose(est.transform(sparse.design), sparse.design * est.filter_)
    X = np.random.default_rng(0).standard_normal((50, 100))
    assert est.score(X, X @ sparse.true_weights) > 1 - 1e-8
    with pytest.raises(InvalidDims):
        est.predict(X[:, :10])


def test_l1_and_diag_net_regressors(sparse):
    l1 = L1Regressor().fit(sparse.design, sparse.labels)
    np.testing.assert_array_equal(l1.coef_, l1_min(sparse))
    net = DiagNetRegressor(steps=200, random_state=3).fit(sparse.design, sparse.labels)
    w, _ = train_diag_net(sparse, 2, TrainConfig(optimizer=GD(0.1), steps=200, init=DiagNearZero(1e-5),
                                                 eval_every=200, seed=3))
    np.testing.assert_array_equal(net.coef_, w)


def test_regressor_in_model_selection(sparse):
    scores = cross_val_score(DiagRFMRegressor(max_iters=200), sparse.design, sparse.labels, cv=3)
    assert scores.shape == (3,) and np.all(np.isfinite(scores))
