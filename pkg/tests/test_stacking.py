import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from survstack.stacking import StackedDataset, StackingConfig, expected_size, stack

from conftest import make_dataset


def brute_force_stack(ds):
    """Enumerate Alg. 1 with gamma=1 straight from the definition."""
    rows = []
    for t in sorted(set(ds.time[ds.event])):
        for i in range(len(ds)):
            if ds.time[i] == t and ds.event[i]:
                rows.append((*ds.X[i], t, 1))
        for j in range(len(ds)):
            if ds.time[j] > t:
                rows.append((*ds.X[j], t, 0))
    return rows


@pytest.fixture
def three():
    return make_dataset([1, 2, 3], [1, 1, 0], [[10.0], [20.0], [30.0]])


def test_hand_example(three):
    st_ = stack(three, StackingConfig(gamma=1.0))
    got = [tuple(r) + (int(y),) for r, y in zip(st_.rows, st_.labels)]
    assert got == [(10, 1, 1), (20, 1, 0), (30, 1, 0), (20, 2, 1), (30, 2, 0)]
    assert expected_size(three, 1.0) == (2, 3.0)
    assert expected_size(three, 0.5) == (2, 1.5)


def test_single_record():
    st_ = stack(make_dataset([4], [1], [[7.0]]), StackingConfig(1.0))
    assert st_.rows.tolist() == [[7.0, 4.0]] and st_.labels.tolist() == [1]


def test_tiny_gamma_leaves_positives():
    ds = make_dataset([1, 2, 3, 4], [1, 1, 1, 0])
    st_ = stack(ds, StackingConfig(gamma=1e-9, seed=0))
    assert len(st_) == 3 and st_.labels.all()


def test_gamma_validation():
    with pytest.raises(ValueError):
        StackingConfig(gamma=0.0)
    with pytest.raises(ValueError):
        StackingConfig(gamma=1.5)


small = st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 6), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n).filter(any),
    st.lists(st.floats(-5, 5), min_size=n, max_size=n)))


@given(small)
def test_gamma_one_matches_brute_force(data):
    t, e, x = data
    ds = make_dataset(t, e, np.array(x)[:, None])
    st_ = stack(ds, StackingConfig(1.0))
    got = [tuple(r) + (int(y),) for r, y in zip(st_.rows, st_.labels)]
    assert got == brute_force_stack(ds)


@given(small, st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_invariants_under_subsampling(data, gamma, seed):
    t, e, x = data
    ds = make_dataset(t, e, np.array(x)[:, None])
    st_ = stack(ds, StackingConfig(gamma, seed))
    full = stack(ds, StackingConfig(1.0))
    # positives do not depend on gamma
    np.testing.assert_array_equal(st_.rows[st_.labels == 1], full.rows[full.labels == 1])
    pos = st_.labels == 1
    src = st_.source
    assert np.all(ds.event[src[pos]]) and np.all(ds.time[src[pos]] == st_.time[pos])
    assert np.all(ds.time[src[~pos]] > st_.time[~pos])
    assert set(st_.time) <= set(ds.event_times())


def test_deterministic_under_seed():
    rng = np.random.default_rng(0)
    ds = make_dataset(rng.integers(1, 50, 300), rng.random(300) < 0.6, rng.standard_normal((300, 2)))
    a, b = stack(ds, StackingConfig(0.1, 3)), stack(ds, StackingConfig(0.1, 3))
    np.testing.assert_array_equal(a.rows, b.rows)


def test_negative_count_near_expectation():
    rng = np.random.default_rng(1)
    ds = make_dataset(rng.exponential(10, 2000), rng.random(2000) < 0.7)
    _, e_neg = expected_size(ds, 0.05)
    st_ = stack(ds, StackingConfig(0.05, 0))
    assert abs(st_.n_negative - e_neg) < 5 * np.sqrt(e_neg)


def test_csv_round_trip(tmp_path, three):
    st_ = stack(three, StackingConfig(1.0))
    st_.to_csv(tmp_path / "s.csv")
    df = pd.read_csv(tmp_path / "s.csv")
    assert list(df.columns) == ["x0", "stack_time", "label"]
    back = StackedDataset.from_frame(df)
    np.testing.assert_array_equal(back.rows, st_.rows)
    np.testing.assert_array_equal(back.labels, st_.labels)
