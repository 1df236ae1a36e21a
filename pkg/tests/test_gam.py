import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logit

from survstack.gam import (GamConfig, GamError, GamModel, best_partition, bin_features,
                           feature_importance, fit_gam, log_loss, logloss_gradient,
                           predict_probability, purify, shape_function, shapes_frame)


def logistic_data(n, d, seed, fn):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = (rng.random(n) < 1 / (1 + np.exp(-fn(X)))).astype(int)
    return X, y


def intercept_only(b, d=2):
    return GamModel(b, tuple(np.array([0.0]) for _ in range(d)), [np.zeros(2)] * d, [], [])


def test_binary_and_constant_features():
    X = np.column_stack([np.tile([0.0, 1.0], 50), np.full(100, 3.0)])
    bm = bin_features(X, 64)
    assert bm.n_bins == (2, 1)


def test_quartile_edges_against_sort_oracle():
    x = np.random.default_rng(0).uniform(size=1000)
    cuts = bin_features(x[:, None], 4).cuts[0]
    s = np.sort(x)
    oracle = [s[249:251].mean(), s[499:501].mean(), s[749:751].mean()]
    np.testing.assert_allclose(cuts, oracle, atol=5e-3)
    assert np.all(np.diff(cuts) > 0)


def test_every_value_maps_to_one_bin():
    X = np.random.default_rng(1).standard_normal((500, 3))
    bm = bin_features(X, 16)
    for j in range(3):
        assert bm.bins[:, j].min() >= 0 and bm.bins[:, j].max() < bm.n_bins[j]


def test_max_rounds_zero_is_intercept_only():
    X, y = logistic_data(500, 2, 0, lambda X: X[:, 0])
    m = fit_gam(X, y, GamConfig(max_rounds=0))
    assert m.intercept == pytest.approx(logit(y.mean()), abs=1e-12)
    assert all(np.all(f == 0) for f in m.main_effects) and not m.pairs


def test_intercept_only_predictions():
    assert predict_probability(intercept_only(0.0), [3.0, -1.0]) == 0.5
    assert predict_probability(intercept_only(logit(0.037)), [0.0, 9.0]) == pytest.approx(0.037)
    with pytest.raises(GamError):
        predict_probability(intercept_only(0.0), [1.0, 2.0, 3.0])


def test_single_class_rejected():
    with pytest.raises(GamError, match="single class"):
        fit_gam(np.zeros((10, 1)), np.zeros(10))


def test_noise_labels_give_flat_effects():
    gaps = []
    for seed in range(3):
        X, y = logistic_data(6000, 3, seed, lambda X: np.zeros(len(X)))
        Xv, yv = logistic_data(3000, 3, seed + 100, lambda X: np.zeros(len(X)))
        m = fit_gam(X, y, GamConfig(seed=seed, n_interactions=0))
        assert max(np.abs(f).max() for f in m.main_effects) < 0.25
        base = log_loss(np.full(len(yv), logit(y.mean())), yv)
        gaps.append(log_loss(m.decision_function(Xv), yv) - base)
    assert np.mean(gaps) < 2e-3


@pytest.fixture(scope="module")
def fitted():
    X, y = logistic_data(20_000, 3, 7, lambda X: 1.5 * np.tanh(X[:, 0]) + X[:, 1] * X[:, 2])
    return X, y, fit_gam(X, y, GamConfig(n_interactions=3, seed=1))


def test_training_loss_non_increasing(fitted):
    h = np.array(fitted[2].metadata["train_loss_history"])
    assert np.all(np.diff(h) <= 1e-12)


def test_contributions_sum_to_score(fitted):
    X, _, m = fitted
    total = m.intercept + m.term_contributions(X).sum(axis=1)
    np.testing.assert_allclose(total, m.decision_function(X), rtol=0, atol=1e-12)


def test_centering(fitted):
    X, _, m = fitted
    B = m.bin(X)
    for j, f in enumerate(m.main_effects):
        w = np.bincount(B[:, j], minlength=f.size)
        assert abs(w @ f / len(X)) < 1e-8
        _, _, c = shape_function(m, j)
        assert abs(w @ c / len(X)) < 1e-8
    for (i, j), t in zip(m.pairs, m.interactions):
        W = np.zeros(t.shape)
        np.add.at(W, (B[:, i], B[:, j]), 1.0)
        rw, cw = W.sum(1), W.sum(0)
        assert np.all(np.abs((W * t).sum(1)[rw > 0] / rw[rw > 0]) < 1e-6)
        assert np.all(np.abs((W * t).sum(0)[cw > 0] / cw[cw > 0]) < 1e-6)


def test_interaction_found(fitted):
    _, _, m = fitted
    assert m.pairs[0] == (1, 2)


def test_monotone_effect_recovered(fitted):
    _, _, m = fitted
    f = m.main_effects[0]
    # tanh is increasing; allow small local wiggles from noise
    assert np.all(np.diff(f) > -0.15) and f[-1] - f[0] > 2.0


def test_additivity_when_one_feature_moves():
    X, y = logistic_data(4000, 3, 2, lambda X: X[:, 0] - X[:, 1])
    m = fit_gam(X, y, GamConfig(n_interactions=0))
    x = np.array([0.0, 0.3, -0.2])
    x2 = x.copy()
    x2[0] = 1.7
    d = m.decision_function(x2[None])[0] - m.decision_function(x[None])[0]
    b0, b1 = m.bin(x[None])[0, 0], m.bin(x2[None])[0, 0]
    assert d == pytest.approx(m.main_effects[0][b1] - m.main_effects[0][b0], abs=1e-12)


def test_importance_hand_values():
    m = GamModel(0.0, (np.array([0.0]), np.array([0.0])), [np.array([-1.0, 1.0]), np.zeros(2)],
                 [], [])
    X = np.array([[-1.0, 0.0], [1.0, 0.0], [-2.0, 5.0], [2.0, 5.0]])
    imp = feature_importance(m, X)
    assert imp == {"x0": 1.0, "x1": 0.0}


def test_constant_effect_absorbed_by_centering():
    B = bin_features(np.random.default_rng(3).standard_normal((500, 2)), 8)
    effects = [np.full(B.n_bins[0], 0.7), np.zeros(B.n_bins[1])]
    b, eff, _ = purify(0.1, effects, [], [], B.bins)
    assert b == pytest.approx(0.8)
    m = GamModel(b, B.cuts, eff, [], [])
    assert feature_importance(m, B)["x0"] < 1e-15


def test_refit_is_bit_identical():
    X, y = logistic_data(3000, 3, 4, lambda X: X[:, 0] - X[:, 2])
    a = fit_gam(X, y, GamConfig(seed=5, n_interactions=2))
    b = fit_gam(X, y, GamConfig(seed=5, n_interactions=2))
    assert a.to_dict() == b.to_dict()


def test_serialization_round_trip(fitted):
    X, _, m = fitted
    m2 = GamModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(m.decision_function(X[:200]), m2.decision_function(X[:200]))
    df = shapes_frame(m)
    assert list(df.columns) == ["term", "bin_low", "bin_high", "contribution"]


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(0, 2, 8)
    y = (rng.random(8) < 0.5).astype(float)
    g, h = logloss_gradient(s, y)
    eps = 1e-6
    for i in range(8):
        e = np.zeros(8)
        e[i] = eps
        fd = (log_loss(s + e, y) - log_loss(s - e, y)) * 8 / (2 * eps)
        assert -g[i] == pytest.approx(fd, abs=1e-6)


def test_best_partition_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        nb = rng.integers(2, 9)
        G, H = rng.normal(size=nb), rng.uniform(0.5, 2, nb)
        leaf, vals = best_partition(G, H, np.ones(nb, int), 2, 1)

        def gain(cuts):
            edges = [0, *cuts, nb]
            return sum(G[a:b].sum() ** 2 / H[a:b].sum() for a, b in zip(edges, edges[1:]))

        best = max([()] + [(a,) for a in range(1, nb)] +
                   [(a, b) for a in range(1, nb) for b in range(a + 1, nb)], key=gain)
        got = sum(G[leaf == k].sum() ** 2 / H[leaf == k].sum() for k in np.unique(leaf))
        assert got == pytest.approx(gain(best), rel=1e-12)
        for k in np.unique(leaf):
            assert vals[k] == pytest.approx(G[leaf == k].sum() / H[leaf == k].sum())
