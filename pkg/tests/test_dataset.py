import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prism.dataset import (
    Dataset,
    DegenerateDataset,
    StrideConfig,
    TriggerSample,
    balance,
    class_weights,
    iteration_counts,
    merge,
    read_records,
    stride_sample,
    uniform_sample,
    write_records,
)
from prism.env import EnvParams

S = StrideConfig(20, 2)
TIMES = np.arange(101, dtype=float)[:, None]  # a "trajectory" whose state is its own time index


def _region(lo, hi):
    return lambda s: (s[:, 0] >= lo) & (s[:, 0] <= hi)


def make(labels, tid="a", start=0, iteration=0, dim=2):
    n = len(labels)
    return Dataset(
        np.arange(n * dim, dtype=float).reshape(n, dim) + start,
        np.array(labels, dtype=np.int8),
        np.array([tid] * n),
        np.arange(start, start + n, dtype=np.int64),
        np.full(n, iteration, dtype=np.int64),
    )


# --- stride sampling ---------------------------------------------------------


def test_stride_all_coarse():
    assert stride_sample(TIMES, S, lambda s: np.zeros(len(s), bool)) == [0, 20, 40, 60, 80, 100]


def test_stride_all_fine():
    assert stride_sample(TIMES, S, lambda s: np.ones(len(s), bool)) == list(range(0, 101, 2))


def test_stride_region_window():
    # region exactly on t in [40, 60]
    assert stride_sample(TIMES, S, _region(40, 60)) == [0, 20, *range(40, 61, 2), 80, 100]


def test_stride_picks_up_region_between_coarse_points():
    # region [45, 55] is entered between coarse samples 40 and 60; the scan
    # only switches to fine once the next fine step lands inside
    assert stride_sample(TIMES, S, _region(45, 55)) == [0, 20, 40, 60, 80, 100]
    assert stride_sample(TIMES, S, _region(42, 55)) == [0, 20, 40, 42, 44, 46, 48, 50, 52, 54, 74, 94]


def test_stride_validation():
    with pytest.raises(ValueError):
        stride_sample(TIMES, StrideConfig(2, 2), _region(0, 1))
    with pytest.raises(ValueError):
        stride_sample(TIMES[:0], S, _region(0, 1))


@given(st.lists(st.booleans(), min_size=1, max_size=300), st.integers(2, 40), st.integers(1, 10))
def test_stride_properties(mask, coarse, fine):
    if fine >= coarse:
        return
    mask = np.array(mask)
    idx = stride_sample(np.zeros((len(mask), 1)), StrideConfig(coarse, fine), lambda s: mask)
    assert idx[0] == 0
    gaps = np.diff(idx)
    assert np.all(np.isin(gaps, [fine, coarse]))
    assert idx[-1] < len(mask)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=300))
def test_stride_monotone_in_region(pairs):
    a = np.array([p[0] and p[1] for p in pairs])
    b = np.array([p[0] for p in pairs])  # a is contained in b
    x = np.zeros((len(pairs), 1))
    assert len(stride_sample(x, S, lambda s: a)) <= len(stride_sample(x, S, lambda s: b))


def test_uniform_sample():
    assert uniform_sample(101, 20) == [0, 20, 40, 60, 80, 100]
    assert uniform_sample(5, 10) == [0]


# --- class weights -----------------------------------------------------------


@pytest.mark.parametrize("n0, n1, expect", [(50, 50, (1.0, 1.0)), (30, 70, (100 / 60, 100 / 140))])
def test_class_weights(n0, n1, expect):
    w = class_weights(make([0] * n0 + [1] * n1))
    assert w == pytest.approx(expect)
    assert w[0] * n0 + w[1] * n1 == pytest.approx(n0 + n1)


def test_class_weights_degenerate():
    with pytest.raises(DegenerateDataset):
        class_weights(make([1] * 70))


@given(st.integers(1, 500), st.integers(1, 500))
def test_class_weights_mass(n0, n1):
    w0, w1 = class_weights(make([0] * n0 + [1] * n1))
    assert w0 * n0 + w1 * n1 == pytest.approx(n0 + n1)
    assert w0 * n0 == pytest.approx(w1 * n1)


# --- buffer bookkeeping --------------------------------------------------------


def test_merge_identity_and_size():
    a = make([0, 1, 1])
    assert merge(a, Dataset.empty(2)) is a
    b = make([0, 0], tid="b")
    m = merge(a, b)
    assert len(m) == 5 and m.counts == (2, 3)
    assert m.unsafe_ratio == pytest.approx((3 * a.unsafe_ratio + 2 * b.unsafe_ratio) / 5)
    assert m.trajectory_ids == {"a", "b"}


def test_merge_rejects_duplicate_keys():
    with pytest.raises(ValueError, match="duplicate"):
        merge(make([0, 1]), make([1], start=1))


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 2], dtype=np.int8), np.array(["a", "a"]), np.array([0, 1]), np.zeros(2, int))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1], dtype=np.int8), np.array(["a", "a"]), np.array([0, 1]), np.zeros(2, int))


def test_from_samples_and_iteration():
    samples = [TriggerSample(np.array([1.0, 2.0]), 1, "t0", 0, 0), TriggerSample(np.array([3.0, 4.0]), 0, "t0", 20, 0)]
    d = Dataset.from_samples(samples)
    back = list(d)
    assert [s.time_index for s in back] == [0, 20]
    assert np.array_equal(back[1].state, [3.0, 4.0]) and back[1].label == 0


def test_balance_subsamples_majority():
    d = make([0] * 10 + [1] * 40)
    b = balance(d, np.random.default_rng(0))
    assert b.counts == (10, 10)
    assert np.all(np.diff(b.time_index) > 0)
    assert b.equals(balance(d, np.random.default_rng(0)))


def test_iteration_counts():
    d = merge(make([0, 1, 1], tid="a"), make([0, 0, 1, 1], tid="b", iteration=1))
    rows = iteration_counts(d)
    assert rows == [
        {"iteration": 0, "total_data": 3, "unsafe_ratio": pytest.approx(1 / 3), "num_traj": 1},
        {"iteration": 1, "total_data": 7, "unsafe_ratio": pytest.approx(3 / 7), "num_traj": 2},
    ]


def test_records_round_trip(tmp_path):
    d = merge(make([0, 1, 1], tid="a"), make([1, 0], tid="b", iteration=2))
    d = Dataset(d.states, d.labels, d.traj_ids, d.time_index, d.iteration, {"a": EnvParams(friction_scale=1.5), "b": EnvParams()})
    write_records(tmp_path / "buf.jsonl", d)
    back = read_records(tmp_path / "buf.jsonl")
    assert back.equals(d)
    assert back.traj_params["a"].friction_scale == 1.5
    assert (tmp_path / "buf.meta.json").exists()


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.integers(0, 1)), min_size=1, max_size=40))
def test_records_round_trip_exact(tmp_path_factory, rows):
    n = len(rows)
    d = Dataset(
        np.array([[a, b] for a, b, _ in rows]),
        np.array([y for *_, y in rows], dtype=np.int8),
        np.array(["x"] * n),
        np.arange(n, dtype=np.int64),
        np.zeros(n, dtype=np.int64),
    )
    path = tmp_path_factory.mktemp("rec") / "d.jsonl"
    write_records(path, d)
    assert read_records(path).equals(d)
