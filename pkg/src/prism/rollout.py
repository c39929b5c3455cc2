"""Nominal rollouts, fallback labeling and domain randomization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import Env, EnvParams

AXIS_FIELD = {"damping": "damping_scale", "gain": "gain_scale", "friction": "friction_scale"}

# Multiplier ranges used for training-time randomization and the widened test variants.
DEFAULT_RANGE = (0.7, 1.3)
WIDE_RANGES = {"damping": (0.5, 1.6), "friction": (0.4, 2.0), "gain": (0.6, 1.4)}


@dataclass(frozen=True)
class DrConfig:
    axis: str = "none"
    low: float = 1.0
    high: float = 1.0

    def __post_init__(self):
        if self.axis != "none" and self.axis not in AXIS_FIELD:
            raise ValueError(f"unknown DR axis {self.axis!r}")
        if not 0 < self.low <= self.high:
            raise ValueError("DR range must satisfy 0 < low <= high")

    @property
    def label(self) -> str:
        return "none" if self.axis == "none" else f"{self.axis}[{self.low:g},{self.high:g}]"


def randomize_env(base: EnvParams, dr: DrConfig, rng: np.random.Generator, size: int | None = None) -> EnvParams:
    """Draw the selected multiplier uniformly; every other field is left alone.

    With ``size`` set, one draw per rollout is returned as an array field.
    """
    if dr.axis == "none":
        return base
    name = AXIS_FIELD[dr.axis]
    draw = rng.uniform(dr.low, dr.high, size=size)
    return base.replace(**{name: draw if size is not None else float(draw)})


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, dim); never contains a state outside the safe set
    seed: int
    params: EnvParams
    id: str = ""
    failed: bool = False  # nominal policy left the safe set at step len(states)
    dt: float = field(init=False)

    def __post_init__(self):
        if len(self.states) == 0:
            raise ValueError("empty trajectory")
        self.dt = self.params.dt

    def __len__(self) -> int:
        return len(self.states)


def rollout_nominal(
    env: Env, x0, params: EnvParams, horizon: int, seed: int, traj_id: str = ""
) -> Trajectory:
    """Closed-loop rollout under the nominal policy.

    Stops early when the next state would be unsafe; that state is dropped and
    the trajectory is flagged ``failed`` so trigger sampling never sees it.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float)
    states = [x]
    failed = not bool(env.is_safe(x))
    if not failed:
        for _ in range(horizon):
            x = env.step(x, env.nominal_policy(x), params, rng)
            if not env.is_safe(x):
                failed = True
                break
            states.append(x)
    return Trajectory(np.array(states), seed, params, traj_id, failed)


def label_batch(env: Env, states, params: EnvParams, t_max: int, rng: np.random.Generator) -> np.ndarray:
    """One fallback rollout per state; 1 iff terminal is reached within ``t_max``
    steps with every visited state safe.

    ``params`` may carry per-state arrays (domain randomization). Noise is drawn
    for the still-running rollouts only, in row order.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    x = np.array(states, dtype=float, ndmin=2)
    n = len(x)
    labels = np.full(n, -1, dtype=np.int8)
    safe = env.is_safe(x)
    labels[~safe] = 0
    labels[safe & env.is_terminal(x)] = 1
    active = np.flatnonzero(labels < 0)
    for _ in range(t_max):
        if active.size == 0:
            break
        p = params.take(active)
        xa = env.step(x[active], env.fallback_policy(x[active], p), p, rng)
        x[active] = xa
        safe = env.is_safe(xa)
        term = safe & env.is_terminal(xa)
        labels[active[~safe]] = 0
        labels[active[term]] = 1
        active = active[safe & ~term]
    labels[labels < 0] = 0
    return labels


def label_trigger(env: Env, x, params: EnvParams, t_max: int, rng: np.random.Generator) -> int:
    return int(label_batch(env, np.asarray(x, dtype=float)[None], params, t_max, rng)[0])


def estimate_vstop(env: Env, x, params: EnvParams, t_max: int, m: int, rng: np.random.Generator) -> float:
    """Monte-Carlo stoppability: mean of ``m`` independent fallback labels."""
    if m < 1:
        raise ValueError("m must be >= 1")
    reps = np.repeat(np.asarray(x, dtype=float)[None], m, axis=0)
    return float(label_batch(env, reps, params, t_max, rng).mean())
