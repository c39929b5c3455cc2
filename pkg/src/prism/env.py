"""Desk-scale stochastic plants with a nominal task policy and a fixed fallback.

Every function here is vectorized: states are arrays of shape ``(dim,)`` or
``(n, dim)`` and ``EnvParams`` fields may be scalars or arrays of shape ``(n,)``
(one parameter draw per rollout). Noise enters the velocity coordinates only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EnvParams:
    """Plant perturbation knobs. Multipliers are relative to the nominal plant."""

    damping_scale: float | np.ndarray = 1.0
    gain_scale: float | np.ndarray = 1.0
    friction_scale: float | np.ndarray = 1.0
    disturbance_sigma: float = 0.0
    dt: float = 0.01

    def __post_init__(self):
        for name in ("damping_scale", "gain_scale", "friction_scale"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be > 0")
        if self.disturbance_sigma < 0:
            raise ValueError("disturbance_sigma must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    def replace(self, **changes) -> EnvParams:
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out

    def take(self, idx) -> EnvParams:
        """Restrict per-rollout parameter arrays to the rows in ``idx``."""
        changes = {}
        for name in ("damping_scale", "gain_scale", "friction_scale"):
            v = getattr(self, name)
            if isinstance(v, np.ndarray) and v.ndim > 0:
                changes[name] = v[idx]
        return self.replace(**changes) if changes else self


def _batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _unbatch(y: np.ndarray, single: bool):
    return y[0] if single else y


class Env:
    """Common surface shared by the toy plants."""

    name: str
    dimension: int
    u_max: float
    coord_names: tuple[str, ...]
    # Declared nominal state box, shape (dim, 2); used for input scaling and grids.
    box: np.ndarray
    horizon: int

    def _check(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.dimension:
            raise ValueError(f"{self.name}: expected state dim {self.dimension}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.name}: non-finite state")

    def step(self, x, u, params: EnvParams, rng: np.random.Generator):
        xb, single = _batch(x)
        self._check(xb)
        ub = np.clip(np.broadcast_to(np.asarray(u, dtype=float), xb.shape[:1]), -self.u_max, self.u_max)
        xn = self._deriv_step(xb, ub, params)
        if params.disturbance_sigma > 0:
            noise = rng.standard_normal((xb.shape[0], len(self.velocity_idx)))
            xn[:, self.velocity_idx] += params.disturbance_sigma * noise
        return _unbatch(xn, single)

    def nominal_policy(self, x):
        xb, single = _batch(x)
        return _unbatch(np.clip(self._nominal(xb), -self.u_max, self.u_max), single)

    def fallback_policy(self, x, params: EnvParams):
        xb, single = _batch(x)
        return _unbatch(np.clip(self._fallback(xb, params), -self.u_max, self.u_max), single)

    def is_safe(self, x):
        xb, single = _batch(x)
        return _unbatch(self._safe(xb), single)

    def is_terminal(self, x):
        xb, single = _batch(x)
        return _unbatch(self._safe(xb) & self._terminal(xb), single)

    def sample_initial_state(self, rng: np.random.Generator, n: int | None = None):
        lo, hi = self.init_box[:, 0], self.init_box[:, 1]
        size = (1 if n is None else n, self.dimension)
        x = lo + (hi - lo) * rng.random(size)
        return x[0] if n is None else x

    def spec_dict(self) -> dict:
        out = {"name": self.name, "dimension": self.dimension}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass(frozen=True)
class BrakingEnv(Env):
    """Point vehicle on a line approaching an obstacle at ``d_obs``.

    State ``[p, v]``; control is longitudinal acceleration. The nominal policy
    tracks ``v_ref`` and coasts once past ``p_coast``, which carries it into
    the obstacle, so trigger states span both labels.
    """

    d_obs: float = 9.0
    v_tol: float = 0.05
    u_max: float = 2.0
    a_max: float = 2.0
    v_ref: float = 2.5
    k_v: float = 1.0
    p_coast: float = 8.0
    linear_damping: float = 0.01
    horizon: int = 600  # default nominal rollout length, steps
    init_box: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.5], [0.0, 0.2]]))
    box: np.ndarray = field(default_factory=lambda: np.array([[0.0, 10.0], [-0.5, 3.5]]))

    name = "braking"
    dimension = 2
    coord_names = ("p", "v")
    velocity_idx = [1]

    def _deriv_step(self, x, u, params):
        p, v = x[:, 0], x[:, 1]
        dt = params.dt
        pn = p + v * dt
        vn = v + u * params.friction_scale * dt - params.damping_scale * self.linear_damping * v * dt
        return np.stack([pn, vn], axis=1)

    def _nominal(self, x):
        p, v = x[:, 0], x[:, 1]
        return np.where(p > self.p_coast, 0.0, self.k_v * (self.v_ref - v))

    def _fallback(self, x, params):
        return -np.sign(x[:, 1]) * self.a_max * params.gain_scale

    def _safe(self, x):
        return x[:, 0] < self.d_obs

    def _terminal(self, x):
        return np.abs(x[:, 1]) <= self.v_tol


@dataclass(frozen=True)
class CartPoleEnv(Env):
    """Pole on a force-driven cart; ``theta = 0`` is upright.

    State ``[theta, theta_dot, c, c_dot]``. The nominal policy is a lightly
    damped balance controller with an energy pump that drives the pole onto a
    swing of amplitude ``swing_amp`` around upright. The fallback is a PD
    stabilizer on the pole angle only, so cart drift and pole falls are both
    failure modes. Track friction (scaled by ``friction_scale``) is viscous
    and eats into the force available for recovery.
    """

    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    joint_damping: float = 0.01
    track_friction: float = 1.0
    u_max: float = 10.0
    theta_max: float = np.pi / 2
    c_max: float = 2.4
    theta_tol: float = 0.05
    omega_tol: float = 0.05
    # nominal: balance PD + swing pump + weak cart centering
    nom_kp: float = 20.0
    nom_kd: float = 1.0
    nom_kc: float = 0.5
    nom_kcd: float = 1.0
    swing_amp: float = 0.4
    pump_gain: float = 3.0
    # fallback PD on the pole angle
    fb_kp: float = 30.0
    fb_kd: float = 5.0
    horizon: int = 1000
    init_box: np.ndarray = field(
        default_factory=lambda: np.array([[-0.05, 0.05], [-0.05, 0.05], [-0.1, 0.1], [-0.05, 0.05]])
    )
    box: np.ndarray = field(
        default_factory=lambda: np.array([[-0.4, 0.4], [-1.2, 1.2], [-1.5, 1.5], [-2.0, 2.0]])
    )

    name = "cartpole"
    dimension = 4
    coord_names = ("theta", "theta_dot", "c", "c_dot")
    velocity_idx = [1, 3]

    @property
    def _lin(self) -> tuple[float, float]:
        """Linearized pole response ``theta_dd ~ a*theta - b*force`` about upright."""
        m_t = self.cart_mass + self.pole_mass
        den = self.half_length * (4.0 / 3.0 - self.pole_mass / m_t)
        return self.gravity / den, 1.0 / (m_t * den)

    def _accels(self, x, u, params):
        th, om, cd = x[:, 0], x[:, 1], x[:, 3]
        m_t = self.cart_mass + self.pole_mass
        ml = self.pole_mass * self.half_length
        s, c = np.sin(th), np.cos(th)
        temp = (u - self.track_friction * params.friction_scale * cd + ml * om**2 * s) / m_t
        den = self.half_length * (4.0 / 3.0 - self.pole_mass * c**2 / m_t)
        th_dd = (self.gravity * s - c * temp - self.joint_damping * params.damping_scale * om / ml) / den
        c_dd = temp - ml * th_dd * c / m_t
        return th_dd, c_dd

    def _deriv_step(self, x, u, params):
        th_dd, c_dd = self._accels(x, u, params)
        dt = params.dt
        return np.stack(
            [x[:, 0] + x[:, 1] * dt, x[:, 1] + th_dd * dt, x[:, 2] + x[:, 3] * dt, x[:, 3] + c_dd * dt],
            axis=1,
        )

    def _nominal(self, x):
        th, om, c, cd = x.T
        a, b = self._lin
        w2 = b * self.nom_kp - a
        energy = 0.5 * om**2 + 0.5 * w2 * th**2
        target = 0.5 * w2 * self.swing_amp**2
        pump = -self.pump_gain * (target - energy) * om
        return self.nom_kp * th + self.nom_kd * om + pump + self.nom_kc * c + self.nom_kcd * cd

    def _fallback(self, x, params):
        return params.gain_scale * (self.fb_kp * x[:, 0] + self.fb_kd * x[:, 1])

    def _safe(self, x):
        return (np.abs(x[:, 0]) < self.theta_max) & (np.abs(x[:, 2]) < self.c_max)

    def _terminal(self, x):
        return (np.abs(x[:, 0]) <= self.theta_tol) & (np.abs(x[:, 1]) <= self.omega_tol)


ENVS = {"braking": BrakingEnv, "cartpole": CartPoleEnv}


def make_env(name: str, **overrides) -> Env:
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None
    return cls(**overrides)
