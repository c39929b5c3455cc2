import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prism.env import EnvParams
from prism.rollout import (
    DEFAULT_RANGE,
    WIDE_RANGES,
    DrConfig,
    estimate_vstop,
    label_batch,
    label_trigger,
    randomize_env,
    rollout_nominal,
)


def test_single_step_rollout(braking, calm):
    x0 = np.zeros(2)
    tr = rollout_nominal(braking, x0, calm, 1, seed=0)
    assert len(tr) == 2
    assert np.array_equal(tr.states[1], braking.step(x0, braking.nominal_policy(x0), calm, None))
    assert tr.dt == 0.01


def test_nominal_braking_runs_into_obstacle(braking, calm):
    tr = rollout_nominal(braking, np.zeros(2), calm, 600, seed=0)
    # the coasting vehicle hits the obstacle at step 465; that state is dropped
    assert tr.failed and len(tr) == 465
    assert 7.5 <= tr.states[-1, 0] < 9.0
    assert np.allclose(tr.states[-1], [8.98840475, 2.43109253])
    assert np.all(braking.is_safe(tr.states))


def test_rollout_replay_is_bit_identical(braking):
    p = EnvParams(disturbance_sigma=0.05)
    a = rollout_nominal(braking, np.array([0.2, 0.1]), p, 300, seed=99)
    b = rollout_nominal(braking, np.array([0.2, 0.1]), p, 300, seed=99)
    assert np.array_equal(a.states, b.states)
    c = rollout_nominal(braking, np.array([0.2, 0.1]), p, 300, seed=100)
    assert not np.array_equal(a.states, c.states)


def test_rollout_from_unsafe_start(braking, calm):
    tr = rollout_nominal(braking, np.array([9.5, 0.0]), calm, 10, seed=0)
    assert tr.failed and len(tr) == 1


@pytest.mark.parametrize("x, expect", [((5.0, 0.0), 1), ((9.5, 0.0), 0), ((8.5, 2.0), 0), ((5.0, 2.0), 1)])
def test_label_examples(braking, calm, rng, x, expect):
    assert label_trigger(braking, np.array(x), calm, 500, rng) == expect


def test_label_needs_time(braking, calm, rng):
    # stopping from 2 m/s at 2 m/s^2 takes ~98 steps
    assert label_trigger(braking, np.array([5.0, 2.0]), calm, 90, rng) == 0
    assert label_trigger(braking, np.array([5.0, 2.0]), calm, 100, rng) == 1


@pytest.mark.parametrize("x, expect", [((5.0, 2.0), 1.0), ((8.5, 2.0), 0.0)])
def test_vstop_deterministic(braking, calm, rng, x, expect):
    assert estimate_vstop(braking, np.array(x), calm, 500, 7, rng) == expect


def test_vstop_bernoulli_spread(braking):
    # a boundary state under noise: the estimate is a Bernoulli mean
    p = EnvParams(disturbance_sigma=0.05)
    x = np.array([8.0, 2.0])
    ests = [estimate_vstop(braking, x, p, 500, 64, np.random.default_rng(s)) for s in range(40)]
    mean = np.mean(ests)
    assert 0.05 < mean < 0.95
    assert np.std(ests) == pytest.approx(np.sqrt(mean * (1 - mean) / 64), rel=0.5)
    assert all(round(e * 64) == e * 64 for e in ests)


def test_label_reproducible(braking):
    p = EnvParams(disturbance_sigma=0.05)
    x = np.array([[8.0, 2.0]] * 50)
    a = label_batch(braking, x, p, 500, np.random.default_rng(4))
    b = label_batch(braking, x, p, 500, np.random.default_rng(4))
    assert np.array_equal(a, b) and 0 < a.sum() < 50


def test_per_row_params_match_rowwise(braking, calm, rng):
    x = np.array([[7.9, 1.5], [7.9, 1.5], [7.9, 1.5]])
    fric = np.array([0.5, 1.0, 2.0])
    batch = label_batch(braking, x, calm.replace(friction_scale=fric), 500, rng)
    rowwise = [label_trigger(braking, x[i], calm.replace(friction_scale=f), 500, rng) for i, f in enumerate(fric)]
    assert batch.tolist() == rowwise == [0, 1, 1]


@given(st.floats(-2, 12), st.floats(-4, 4))
def test_label_invariants(p, v):
    from prism.env import BrakingEnv

    env = BrakingEnv()
    x = np.array([p, v])
    lab = label_trigger(env, x, EnvParams(), 500, np.random.default_rng(0))
    if env.is_terminal(x):
        assert lab == 1
    if not env.is_safe(x):
        assert lab == 0


def test_dr_identity_and_support():
    base = EnvParams(disturbance_sigma=0.1)
    assert randomize_env(base, DrConfig(), np.random.default_rng(0)) is base
    p = randomize_env(base, DrConfig("friction", *WIDE_RANGES["friction"]), np.random.default_rng(0), size=10_000)
    assert np.all((p.friction_scale >= 0.4) & (p.friction_scale <= 2.0))
    q = randomize_env(base, DrConfig("damping", *DEFAULT_RANGE), np.random.default_rng(0), size=10_000)
    assert q.gain_scale == 1.0 and q.friction_scale == 1.0 and q.disturbance_sigma == 0.1
    assert isinstance(randomize_env(base, DrConfig("gain", 0.6, 1.4), np.random.default_rng(0)).gain_scale, float)


def test_dr_validation():
    with pytest.raises(ValueError):
        DrConfig("mass", 0.5, 1.5)
    with pytest.raises(ValueError):
        DrConfig("gain", 1.5, 0.5)
    assert DrConfig("gain", 0.6, 1.4).label == "gain[0.6,1.4]"
