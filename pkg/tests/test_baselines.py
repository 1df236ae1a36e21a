import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from conftest import make_dataset
from survstack.baselines import (ConvergenceError, CoxConfig, CoxModel, LogisticConfig,
                                 LogisticModel, breslow_cumulative_hazard, cox_gradient,
                                 cox_log_partial_likelihood, cox_risk_score, cox_survival,
                                 fit_cox, fit_logistic_matrix)
from survstack.core import nelson_aalen
from survstack.synth import SyntheticSpec, generate


def _random_instance(seed, n=12, d=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    # integer times force ties
    time = rng.integers(1, 6, n).astype(float)
    event = rng.random(n) < 0.7
    event[0] = True
    return X, time, event, rng.standard_normal(d) * 0.5


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    X, time, event, beta = _random_instance(seed)
    g = cox_gradient(beta, X, time, event, ridge=0.1)
    h = 1e-6
    fd = np.empty_like(beta)
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        fd[j] = (cox_log_partial_likelihood(beta + e, X, time, event, 0.1)
                 - cox_log_partial_likelihood(beta - e, X, time, event, 0.1)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def _breslow_loglik_by_hand(beta, X, time, event):
    ll = 0.0
    for i in np.flatnonzero(event):
        risk = time >= time[i]
        ll += X[i] @ beta - np.log(np.sum(np.exp(X[risk] @ beta)))
    return ll


def test_log_partial_likelihood_matches_direct_sum():
    X, time, event, beta = _random_instance(3)
    assert cox_log_partial_likelihood(beta, X, time, event) == pytest.approx(
        _breslow_loglik_by_hand(beta, X, time, event), rel=1e-12)


def test_two_records_ridge_maximizer_matches_golden_section():
    ds = make_dataset([1.0, 2.0], [1, 1], [[1.0], [0.0]])
    model = fit_cox(ds, CoxConfig(ridge=0.01, tol=1e-12))
    oracle = minimize_scalar(lambda b: -(b - np.log(np.exp(b) + 1.0) - 0.005 * b * b),
                             bracket=(0.0, 5.0), method="golden", tol=1e-12)
    assert model.beta[0] > 0
    assert model.beta[0] == pytest.approx(oracle.x, abs=1e-5)


def test_constant_column_gets_zero_coefficient():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.standard_normal(100), np.full(100, 2.0)])
    ds = make_dataset(rng.exponential(size=100), np.ones(100), X)
    model = fit_cox(ds, CoxConfig(ridge=0.01))
    assert abs(model.beta[1]) < 1e-10


def test_separation_raises_with_ridge_advice():
    x = np.arange(1.0, 21.0)
    # larger x always fails first: monotone likelihood
    ds = make_dataset(21.0 - x, np.ones(20), x[:, None])
    with pytest.raises(ConvergenceError, match="ridge"):
        fit_cox(ds, CoxConfig(ridge=0.0))
    assert np.isfinite(fit_cox(ds, CoxConfig(ridge=1.0)).beta).all()


def test_non_convergence_reports_gradient():
    X, time, event, _ = _random_instance(1, n=40)
    with pytest.raises(ConvergenceError, match="gradient norm"):
        fit_cox(make_dataset(time, event, X), CoxConfig(max_iter=1, tol=1e-14))


def test_loglik_non_decreasing_across_newton_steps():
    ds, _ = generate(SyntheticSpec(n=300, seed=4))
    hist = fit_cox(ds).diagnostics["loglik_history"]
    assert len(hist) >= 2
    assert np.all(np.diff(hist) >= -1e-9 * abs(hist[0]))


def test_breslow_at_zero_beta_is_nelson_aalen():
    ds = make_dataset([1, 2, 2, 3], [1, 1, 0, 1], np.zeros((4, 2)))
    H = breslow_cumulative_hazard(ds, np.zeros(2))
    # 1/4, then 1/3 (three at risk at t=2, one event), then 1/1
    np.testing.assert_allclose(H([0.5, 1, 2, 3]), [0, 0.25, 0.25 + 1 / 3, 1.25 + 1 / 3])
    np.testing.assert_allclose(H([1, 2, 3]), nelson_aalen(ds)([1, 2, 3]))


def test_scaling_a_column_rescales_its_coefficient():
    ds, _ = generate(SyntheticSpec(n=500, seed=2))
    base = fit_cox(ds, CoxConfig(ridge=1e-9))
    X = ds.X.copy()
    X[:, 0] *= 3.0
    scaled = fit_cox(make_dataset(ds.time, ds.event, X), CoxConfig(ridge=1e-9))
    assert scaled.beta[0] == pytest.approx(base.beta[0] / 3.0, rel=1e-4)
    assert np.array_equal(np.argsort(base.risk_score(ds.X)), np.argsort(scaled.risk_score(X)))


def test_recovers_beta_on_proportional_hazards_data():
    ds, _ = generate(SyntheticSpec(n=2000, seed=11))
    np.testing.assert_allclose(fit_cox(ds).beta, [1.0, -0.5], atol=0.15)


def test_survival_examples():
    ds = make_dataset([2.0, 3.0, 4.0, 5.0], [1, 1, 0, 1], [[0.5], [-0.2], [0.1], [1.0]])
    model = fit_cox(ds, CoxConfig(ridge=0.1))
    assert cox_survival(model, [0.3], 1.0) == 1.0
    base = np.exp(-model.baseline_cumhaz(3.5))
    assert cox_survival(model, [0.0], 3.5) == pytest.approx(base)
    grid = np.linspace(0, 6, 25)
    s = model.survival(np.array([[0.3]]), grid)[0]
    assert np.all(np.diff(s) <= 0) and np.all((s > 0) & (s <= 1))
    hi = np.sign(model.beta[0])
    assert cox_survival(model, [hi], 4.0) < cox_survival(model, [0.0], 4.0)


def test_risk_score_examples():
    model = CoxModel(np.array([1.0, 0.0]), breslow_cumulative_hazard(
        make_dataset([1.0], [1], [[0.0, 0.0]]), np.zeros(2)))
    assert cox_risk_score(model, [0.0, 0.0]) == 0.0
    assert cox_risk_score(model, [2.0, 5.0]) == 2.0


def test_cox_serialization_round_trip():
    ds, _ = generate(SyntheticSpec(n=200, seed=1))
    model = fit_cox(ds)
    back = CoxModel.from_dict(json.loads(json.dumps(model.to_dict())))
    np.testing.assert_array_equal(back.beta, model.beta)
    grid = np.linspace(0, 10, 7)
    np.testing.assert_array_equal(back.survival(ds.X[:5], grid), model.survival(ds.X[:5], grid))
    with pytest.raises(ValueError, match="schema"):
        CoxModel.from_dict({"schema": "other"})


def test_logistic_uninformative_balanced():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((4000, 3))
    y = np.tile([0.0, 1.0], 2000)
    m = fit_logistic_matrix(Z, y)
    assert abs(m.intercept) < 0.1
    assert np.abs(m.weights).max() < 0.1


def test_logistic_prevalence():
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((5000, 2))
    y = (rng.random(5000) < 0.2).astype(float)
    p = fit_logistic_matrix(Z, y).predict_proba(Z)
    assert np.abs(p - 0.2).max() < 0.05


def test_logistic_separable_matches_golden_section():
    Z = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    m = fit_logistic_matrix(Z, y, LogisticConfig(l2=1.0, tol=1e-12))

    # symmetric data: intercept is 0 at the optimum
    def loss(w):
        s = w * Z[:, 0]
        return np.sum(np.log1p(np.exp(s)) - y * s) + 0.5 * w * w

    oracle = minimize_scalar(loss, bracket=(0.0, 10.0), method="golden", tol=1e-12)
    assert m.weights[0] == pytest.approx(oracle.x, abs=1e-4)
    assert abs(m.intercept) < 1e-6


def test_logistic_needs_both_classes():
    with pytest.raises(ValueError, match="both classes"):
        fit_logistic_matrix(np.zeros((3, 1)), np.ones(3))


def test_logistic_non_convergence():
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((200, 2))
    y = (Z[:, 0] + rng.standard_normal(200) > 0).astype(float)
    with pytest.raises(ConvergenceError):
        fit_logistic_matrix(Z, y, LogisticConfig(max_iter=1, tol=1e-15))


@settings(max_examples=20)
@given(st.integers(0, 1000))
def test_logistic_round_trip(seed):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((50, 2))
    y = (rng.random(50) < 0.5).astype(float)
    y[:2] = [0, 1]
    m = fit_logistic_matrix(Z, y, feature_names=("a", "b"))
    back = LogisticModel.from_dict(json.loads(json.dumps(m.to_dict())))
    np.testing.assert_array_equal(back.predict_proba(Z), m.predict_proba(Z))
    assert back.feature_names == ("a", "b")
