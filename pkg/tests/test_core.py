import numpy as np
import pytest
from hypothesis import given, strategies as st

from survstack.core import (DatasetError, StepFunction, SurvivalDataset, censoring_kaplan_meier,
                            kaplan_meier, nelson_aalen, read_table, risk_set, validate_dataset)

from conftest import make_dataset


def km_by_loop(times, events, t):
    """Product-limit value at t by walking the distinct event times one by one."""
    s = 1.0
    for u in sorted(set(times[events])):
        if u > t:
            break
        d = np.sum((times == u) & events)
        n = np.sum(times >= u)
        s *= 1 - d / n
    return s


survival_data = st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 8), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)))


def test_validate_counts():
    ds = validate_dataset({"time": [1, 2, 3], "event": [1, 0, 1], "x": [0.5, 1.5, 2.5]})
    assert (ds.n_events, ds.n_censored) == (2, 1)
    assert ds.summary()["prevalence"] == pytest.approx(2 / 3)


def test_validate_negative_time_names_row():
    with pytest.raises(DatasetError, match="row 1"):
        validate_dataset({"time": [1, -1, 3], "event": [1, 0, 1]})


def test_validate_no_events():
    with pytest.raises(DatasetError, match="degenerate dataset"):
        validate_dataset({"time": [1, 2], "event": [0, 0]})


def test_validate_ragged_rows():
    with pytest.raises(DatasetError, match="parse error"):
        validate_dataset([["time", "event", "x"], [1, 1, 0.3], [2, 0]])


def test_validate_rejects_text_feature():
    with pytest.raises(DatasetError, match="not numeric"):
        validate_dataset({"time": [1, 2], "event": [1, 1], "g": ["a", "b"]})


def test_read_table_missing_fields(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,event,x\n1,1,0.5\n2,0,\n")
    ds = validate_dataset(read_table(p))
    assert np.isnan(ds.X[1, 0]) and ds.has_missing
    with pytest.raises(DatasetError):
        ds.require_finite()


def test_risk_set(tiny):
    assert risk_set(tiny, 2).tolist() == [1, 2]
    assert risk_set(tiny, 0).tolist() == [0, 1, 2]
    assert risk_set(tiny, 4).size == 0


def test_step_function_right_continuous():
    f = StepFunction([1.0, 3.0], [0.5, 0.2], 1.0)
    assert f(0.5) == 1.0 and f(1.0) == 0.5 and f(2.9) == 0.5 and f(3.0) == 0.2 and f(9) == 0.2
    assert f.left_limit(1.0) == 1.0 and f.left_limit(3.0) == 0.5


def test_km_hand_example(tiny):
    S = kaplan_meier(tiny)
    assert S(0.5) == 1.0
    assert S(1.0) == pytest.approx(2 / 3) and S(2.99) == pytest.approx(2 / 3)
    assert S(3.0) == 0.0 and S(10) == 0.0


def test_km_all_censored_is_one():
    S = kaplan_meier(make_dataset([1, 2, 3], [0, 0, 0]))
    assert S(5) == 1.0


def test_km_all_events_at_one():
    S = kaplan_meier(make_dataset([1, 1, 1], [1, 1, 1]))
    assert S(0.99) == 1.0 and S(1) == 0.0


def test_censoring_km_examples(tiny):
    G = censoring_kaplan_meier(tiny)
    assert G(1.99) == 1.0 and G(2) == pytest.approx(0.5) and G(100) == pytest.approx(0.5)
    assert censoring_kaplan_meier(make_dataset([1, 2], [1, 1]))(10) == 1.0
    G = censoring_kaplan_meier(make_dataset([5, 5, 5], [0, 0, 0]))
    assert G(4.99) == 1.0 and G(5) == 0.0


def test_nelson_aalen_hand():
    H = nelson_aalen(make_dataset([1, 2, 3], [1, 0, 1]))
    assert H(1) == pytest.approx(1 / 3) and H(3) == pytest.approx(1 / 3 + 1)


@given(survival_data)
def test_km_matches_loop_oracle(data):
    t, e = np.array(data[0], float), np.array(data[1])
    S = kaplan_meier(make_dataset(t, e))
    for u in np.arange(0, 10, 0.5):
        assert S(u) == pytest.approx(km_by_loop(t, e, u), abs=1e-12)


@given(survival_data, st.randoms(use_true_random=False))
def test_km_order_invariant(data, rnd):
    t, e = np.array(data[0], float), np.array(data[1])
    perm = list(range(t.size))
    rnd.shuffle(perm)
    a, b = kaplan_meier(make_dataset(t, e)), kaplan_meier(make_dataset(t[perm], e[perm]))
    grid = np.arange(0, 10, 0.25)
    np.testing.assert_array_equal(a(grid), b(grid))


@given(st.lists(st.floats(0.1, 50), min_size=1, max_size=50))
def test_km_uncensored_equals_empirical(times):
    t = np.array(times)
    S = kaplan_meier(make_dataset(t, np.ones(t.size, bool)))
    for u in np.concatenate([t, [0.0, 60.0]]):
        assert S(u) == pytest.approx(np.mean(t > u), abs=1e-12)


@given(survival_data)
def test_km_and_g_bounded_monotone(data):
    t, e = np.array(data[0], float), np.array(data[1])
    grid = np.linspace(0, 10, 41)
    for f in (kaplan_meier(make_dataset(t, e)), censoring_kaplan_meier(make_dataset(t, e))):
        v = f(grid)
        assert np.all((v >= 0) & (v <= 1)) and np.all(np.diff(v) <= 1e-15)


@given(survival_data, st.floats(0, 9), st.floats(0, 9))
def test_risk_sets_nested(data, a, b):
    ds = make_dataset(np.array(data[0], float), np.array(data[1]))
    t1, t2 = min(a, b), max(a, b)
    assert set(risk_set(ds, t2)) <= set(risk_set(ds, t1))


def test_dataset_is_immutable(tiny):
    with pytest.raises(ValueError):
        tiny.X[0, 0] = 5.0
