import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prism.env import BrakingEnv, CartPoleEnv, EnvParams, make_env

finite = st.floats(-50, 50, allow_nan=False)


# --- braking: worked examples ---------------------------------------------------


@pytest.mark.parametrize(
    "x, u, expect",
    [
        ((0.0, 0.0), 0.0, (0.0, 0.0)),
        ((5.0, 2.0), 0.0, (5.02, 1.9998)),
        ((5.0, 2.0), -2.0, (5.02, 1.9798)),
    ],
)
def test_braking_step(braking, calm, x, u, expect):
    assert np.allclose(braking.step(np.array(x), u, calm, None), expect, atol=1e-12)


@pytest.mark.parametrize("x, expect", [((0, 2.5), 0.0), ((0, 0), 2.0), ((8.5, 2.5), 0.0), ((3.0, 2.0), 0.5)])
def test_braking_nominal(braking, x, expect):
    assert braking.nominal_policy(np.array(x, dtype=float)) == pytest.approx(expect)


@pytest.mark.parametrize("x, gain, expect", [((5, 2), 1.0, -2.0), ((5, 0), 1.0, 0.0), ((5, -1), 0.5, 1.0), ((5, 2), 1.4, -2.0)])
def test_braking_fallback(braking, x, gain, expect):
    # gain 1.4 asks for 2.8 but the clamp at u_max holds it to 2
    assert braking.fallback_policy(np.array(x, dtype=float), EnvParams(gain_scale=gain)) == pytest.approx(expect)


@pytest.mark.parametrize("x, safe, terminal", [((8.99, 5.0), True, False), ((9.0, 0.0), False, False), ((10.0, -1.0), False, False),
                                               ((5.0, 0.0), True, True), ((5.0, 0.06), True, False), ((9.5, 0.0), False, False)])
def test_braking_sets(braking, x, safe, terminal):
    x = np.array(x)
    assert bool(braking.is_safe(x)) is safe
    assert bool(braking.is_terminal(x)) is terminal


def test_initial_state_support_and_mean(braking):
    x = braking.sample_initial_state(np.random.default_rng(0), 10_000)
    lo, hi = braking.init_box[:, 0], braking.init_box[:, 1]
    assert np.all((x >= lo) & (x <= hi))
    assert abs(x[:, 0].mean() - 0.25) < 0.02
    a = braking.sample_initial_state(np.random.default_rng(3))
    b = braking.sample_initial_state(np.random.default_rng(3))
    assert a.shape == (2,) and np.array_equal(a, b)


def test_noise_only_on_velocity(braking):
    p = EnvParams(disturbance_sigma=0.3)
    x = np.array([[1.0, 1.0]] * 200)
    y = braking.step(x, 0.0, p, np.random.default_rng(0))
    assert np.all(y[:, 0] == 1.01)
    assert y[:, 1].std() > 0.2


# --- cart-pole -------------------------------------------------------------------


def _gym_step(x, u, fric=1.0, damp=0.01, dt=0.01):
    # textbook cart-pole with viscous track friction and joint damping, written out independently
    th, om, c, cd = x
    g, mc, mp, l = 9.8, 1.0, 0.1, 0.5
    mt = mc + mp
    temp = (u - fric * cd + mp * l * om**2 * math.sin(th)) / mt
    th_dd = (g * math.sin(th) - math.cos(th) * temp - damp * om / (mp * l)) / (l * (4 / 3 - mp * math.cos(th) ** 2 / mt))
    c_dd = temp - mp * l * th_dd * math.cos(th) / mt
    return np.array([th + om * dt, om + th_dd * dt, c + cd * dt, cd + c_dd * dt])


def test_cartpole_step_matches_textbook(cartpole, calm):
    x = np.array([0.1, -0.2, 0.3, 0.4])
    got = cartpole.step(x, 2.0, calm, None)
    assert np.allclose(got, _gym_step(x, 2.0), atol=1e-14)
    # frozen regression value
    assert np.allclose(got, [0.098, -0.2069023, 0.304, 0.41485944], atol=1e-8)


def test_cartpole_scales(cartpole):
    x = np.array([0.1, -0.2, 0.3, 0.4])
    p = EnvParams(friction_scale=1.7, damping_scale=0.6)
    assert np.allclose(cartpole.step(x, -3.0, p, None), _gym_step(x, -3.0, fric=1.7, damp=0.006), atol=1e-14)


def test_cartpole_upright_rest_is_fixed_point(cartpole, calm):
    assert np.array_equal(cartpole.step(np.zeros(4), 0.0, calm, None), np.zeros(4))
    assert cartpole.is_terminal(np.zeros(4))


def test_cartpole_policies(cartpole, calm):
    x = np.array([0.1, -0.2, 0.3, 0.4])
    assert cartpole.fallback_policy(x, calm) == pytest.approx(30 * 0.1 + 5 * -0.2)
    assert cartpole.fallback_policy(x, EnvParams(gain_scale=0.5)) == pytest.approx(1.0)
    assert cartpole.nominal_policy(x) == pytest.approx(2.945170731707317)


@pytest.mark.parametrize("x, safe", [((1.5, 0, 0, 0), True), ((1.58, 0, 0, 0), False), ((0, 0, 2.39, 0), True), ((0, 0, -2.4, 0), False)])
def test_cartpole_safe_set(cartpole, x, safe):
    assert bool(cartpole.is_safe(np.array(x))) is safe


def test_cartpole_initial_states_inside_box(cartpole):
    x = cartpole.sample_initial_state(np.random.default_rng(1), 1000)
    assert np.all(cartpole.is_safe(x))
    assert np.all((x >= cartpole.box[:, 0]) & (x <= cartpole.box[:, 1]))


# --- shared properties ------------------------------------------------------------


@pytest.mark.parametrize("env", [BrakingEnv(), CartPoleEnv()], ids=["braking", "cartpole"])
def test_terminal_subset_of_safe(env):
    rng = np.random.default_rng(7)
    lo, hi = env.box[:, 0] - 1, env.box[:, 1] + 1
    x = lo + (hi - lo) * rng.random((10_000, env.dimension))
    term = env.is_terminal(x)
    assert np.all(~term | env.is_safe(x))


@given(st.sampled_from(["braking", "cartpole"]), st.lists(finite, min_size=4, max_size=4), st.floats(0.1, 3.0))
def test_policy_outputs_bounded(name, coords, gain):
    env = make_env(name)
    x = np.array(coords[: env.dimension])
    assert abs(env.nominal_policy(x)) <= env.u_max
    assert abs(env.fallback_policy(x, EnvParams(gain_scale=gain))) <= env.u_max


@given(st.floats(0, 10), st.floats(-3, 3), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_step_deterministic_given_seed(p, v, u, seed):
    env = BrakingEnv()
    params = EnvParams(disturbance_sigma=0.1)
    x = np.array([p, v])
    a = env.step(x, u, params, np.random.default_rng(seed))
    b = env.step(x, u, params, np.random.default_rng(seed))
    assert np.array_equal(a, b)


@given(st.floats(0, 8), st.floats(-3.5, 3.5), st.floats(0.3, 2.0), st.floats(0.3, 2.0))
def test_fallback_speed_non_increasing(p, v, gain, fric):
    env = BrakingEnv()
    params = EnvParams(gain_scale=gain, friction_scale=fric)
    x = np.array([p, v])
    a_eff = min(env.a_max * gain, env.u_max) * fric
    for _ in range(400):
        if abs(x[1]) <= a_eff * params.dt:
            break
        nxt = env.step(x, env.fallback_policy(x, params), params, None)
        assert abs(nxt[1]) <= abs(x[1])
        x = nxt


def test_params_validation():
    with pytest.raises(ValueError):
        EnvParams(friction_scale=0.0)
    with pytest.raises(ValueError):
        EnvParams(disturbance_sigma=-1)
    with pytest.raises(ValueError):
        make_env("humanoid")


def test_params_take_restricts_arrays():
    p = EnvParams(friction_scale=np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(p.take([2, 0]).friction_scale, [3.0, 1.0])
    assert p.take([1]).gain_scale == 1.0
    scalar = EnvParams()
    assert scalar.take([0]) is scalar
