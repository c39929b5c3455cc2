"""Reference stoppability: closed form for the braking plant, Monte-Carlo grids for any plant."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .env import BrakingEnv, Env, EnvParams
from .monitor import MonitorParams, forward
from .rollout import label_batch


def analytic_stoppable_braking(x, env: Env, params: EnvParams, t_max: int):
    """Closed-form reach-avoid answer for the noiseless braking plant.

    Ignores the small linear damping term. The deceleration the fallback can
    actually apply is ``min(a_max * gain, u_max)`` scaled by friction.
    """
    if not isinstance(env, BrakingEnv):
        raise TypeError("analytic oracle exists only for the braking env")
    xb = np.atleast_2d(np.asarray(x, dtype=float))
    p, v = xb[:, 0], xb[:, 1]
    decel = np.minimum(env.a_max * params.gain_scale, env.u_max) * params.friction_scale
    safe = p < env.d_obs
    at_rest = np.abs(v) <= env.v_tol
    in_time = np.abs(v) / decel <= t_max * params.dt
    # moving away from the obstacle only needs to stop in time
    clears = np.where(v > 0, p + v**2 / (2 * decel) < env.d_obs, True)
    out = safe & (at_rest | (in_time & clears))
    return bool(out[0]) if np.ndim(x) == 1 else out


def cell_centers(box, resolution) -> list[np.ndarray]:
    """Cell-center coordinates per axis. A degenerate axis ``(a, a)`` or
    resolution 1 yields a single slice coordinate."""
    axes = []
    for (lo, hi), r in zip(np.asarray(box, dtype=float), resolution):
        if r < 1:
            raise ValueError("resolution must be >= 1 per axis")
        step = (hi - lo) / r
        axes.append(lo + step * (np.arange(r) + 0.5))
    return axes


@dataclass
class LabeledGrid:
    axes: list[np.ndarray]
    values: np.ndarray  # shape = tuple(len(a) for a in axes); Monte-Carlo V_stop in [0, 1]
    alpha: float = 0.5
    coord_names: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def labels(self, alpha: float | None = None) -> np.ndarray:
        """Flattened oracle classes; True = Stoppable."""
        a = self.alpha if alpha is None else alpha
        return self.values.ravel() >= a

    def relabel(self, alpha: float) -> LabeledGrid:
        return LabeledGrid(self.axes, self.values, alpha, self.coord_names)

    def to_csv(self, path: str | Path) -> None:
        names = list(self.coord_names) or [f"x{i}" for i in range(len(self.axes))]
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow([*names, "value", "label"])
            for pt, v, lab in zip(self.points(), self.values.ravel(), self.labels()):
                w.writerow([*(repr(float(c)) for c in pt), repr(float(v)), int(lab)])


def grid_oracle(
    env: Env,
    params: EnvParams,
    resolution,
    m: int,
    t_max: int,
    rng: np.random.Generator,
    box=None,
    alpha: float = 0.5,
    chunk: int = 200_000,
) -> LabeledGrid:
    """Estimate V_stop at every cell center with ``m`` fallback rollouts each.

    ``params`` may carry per-rollout arrays of length ``cells * m`` (rollouts
    ordered cell-major), which is how randomized test grids are built.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    box = env.box if box is None else np.asarray(box, dtype=float)
    if len(resolution) != env.dimension:
        raise ValueError("one resolution per state coordinate")
    axes = cell_centers(box, resolution)
    grid = LabeledGrid(axes, np.zeros(tuple(resolution)), alpha, env.coord_names)
    reps = np.repeat(grid.points(), m, axis=0)
    labels = np.concatenate(
        [label_batch(env, reps[i : i + chunk], params.take(slice(i, i + chunk)), t_max, rng) for i in range(0, len(reps), chunk)]
    )
    grid.values = labels.reshape(-1, m).mean(axis=1).reshape(grid.shape)
    return grid


def monitor_values(theta, x: np.ndarray) -> np.ndarray:
    """Scores from a MonitorParams or any vectorized ``states -> values`` callable."""
    if isinstance(theta, MonitorParams):
        return forward(theta, x)
    return np.broadcast_to(np.asarray(theta(x), dtype=float), (len(x),))


def confusion_rates(pred_stop: np.ndarray, true_stop: np.ndarray) -> dict:
    """Accuracies in percent. ``false_safe_rate`` is the share of truly
    Unstoppable points predicted Stoppable."""
    n_safe = int(true_stop.sum())
    n_unsafe = int((~true_stop).sum())
    hit_safe = int((pred_stop & true_stop).sum())
    hit_unsafe = int((~pred_stop & ~true_stop).sum())
    pct = lambda a, b: 100.0 * a / b if b else float("nan")  # noqa: E731
    return {
        "overall_acc": pct(hit_safe + hit_unsafe, n_safe + n_unsafe),
        "safe_acc": pct(hit_safe, n_safe),
        "unsafe_acc": pct(hit_unsafe, n_unsafe),
        "false_safe_rate": pct(n_unsafe - hit_unsafe, n_unsafe),
        "n_safe": n_safe,
        "n_unsafe": n_unsafe,
    }


def agreement(theta: MonitorParams | Callable, grid: LabeledGrid, alpha: float | None = None) -> dict:
    """Score the monitor's decisions at ``alpha`` against the grid's own labels.

    The reference classes stay at ``grid.alpha``; only the decision threshold moves.
    """
    a = grid.alpha if alpha is None else alpha
    pred = monitor_values(theta, grid.points()) >= a
    return confusion_rates(pred, grid.labels())


def near_boundary(labels: np.ndarray, radius: int = 1) -> np.ndarray:
    """Cells with a differently-labeled cell within ``radius`` cells (Chebyshev) on an n-D grid."""
    labels = np.asarray(labels, dtype=bool)
    out = np.zeros_like(labels)
    pad = np.pad(labels, radius, mode="edge")
    for shift in np.ndindex(*(2 * radius + 1,) * labels.ndim):
        window = pad[tuple(slice(s, s + n) for s, n in zip(shift, labels.shape))]
        out |= window != labels
    return out
