"""Iterative monitor refinement with calibrated importance-guided stride sampling.

One run: collect and label an initial coarse-stride buffer, train, then per
iteration calibrate a residual quantile on a frozen validation set, turn it
into an uncertainty band on the monitor output, densify sampling of new
nominal trajectories inside that band, label, merge and retrain.

Random streams (see ``seeding``): trajectories of iteration ``k`` come from
``("trajectories", k, i)``, their labels from ``("labeling", k)``, the
monitor retrained after iteration ``k`` from ``("training", k + 1)``;
the validation set uses key ``VAL_KEY``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .dataset import Dataset, DegenerateDataset, StrideConfig, class_weights, merge, stride_sample, uniform_sample
from .env import Env, EnvParams
from .monitor import MonitorParams, TrainHyper, bce, forward, init_params, train
from .rollout import DrConfig, Trajectory, label_batch, randomize_env, rollout_nominal

log = logging.getLogger(__name__)

VAL_KEY = 10_000
FALLBACK_BAND = (0.35, 0.65)
MAX_WIDEN = 4


@dataclass(frozen=True)
class PrismConfig:
    alpha: float = 0.5
    beta: float = 0.5
    delta: float = 0.1
    n0: int = 3
    n_i: int = 3
    k_iters: int = 10
    n_val: int = 5
    strides: StrideConfig = StrideConfig(20, 2)
    t_max: int = 500
    horizon: int | None = None  # nominal rollout length; None takes the env default
    dr: DrConfig = DrConfig()
    fallback_band: tuple[float, float] = FALLBACK_BAND
    warm_start: bool = False
    # score unlabeled states with the class-weighted residual instead of the plain one
    weighted_band: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        for name in ("n0", "n_i", "n_val", "t_max", "horizon"):
            if getattr(self, name) is not None and getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.k_iters < 0:
            raise ValueError("k_iters must be >= 0")
        lo, hi = self.fallback_band
        if not 0 < lo <= hi < 1:
            raise ValueError("fallback band must satisfy 0 < lo <= hi < 1")
        self.strides.validate()


@dataclass(frozen=True)
class UncertaintyBand:
    p_lo: float
    p_hi: float

    def __post_init__(self):
        if not 0 < self.p_lo <= self.p_hi < 1:
            raise ValueError("band must satisfy 0 < p_lo <= p_hi < 1")

    def contains(self, v):
        return (np.asarray(v) >= self.p_lo) & (np.asarray(v) <= self.p_hi)


@dataclass
class PrismState:
    k: int
    theta: MonitorParams
    buffer: Dataset
    val: Dataset
    q: float | None = None
    history: list[dict] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list)

    def check(self) -> None:
        if self.val.trajectory_ids & self.buffer.trajectory_ids:
            raise AssertionError("validation trajectories leaked into the training buffer")
        if len(self.history) != self.k + 1:
            raise AssertionError("history length out of sync with iteration counter")


# --- calibration --------------------------------------------------------------


def residuals(theta: MonitorParams, val: Dataset, weights) -> np.ndarray:
    """Per-sample weighted BCE of the monitor on the validation set (input order)."""
    if len(val) == 0:
        raise ValueError("empty validation set")
    y = val.labels.astype(float)
    w = np.where(y == 1, weights[1], weights[0])
    return w * bce(forward(theta, val.states), y)


def quantile(values, level: float) -> float:
    """Conformal order statistic: the ``ceil(level * n)``-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty value list")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    # guard against float noise such as 0.9 * 10 = 9.000000000000002
    k = math.ceil(round(level * v.size, 9))
    return float(v[min(max(k, 1), v.size) - 1])


def uncertainty_band(q: float, fallback=FALLBACK_BAND, weights=(1.0, 1.0)) -> UncertaintyBand:
    """Outputs whose label-free loss is at least ``q``.

    The label-free loss of output ``p`` is the smaller of the two possible
    weighted residuals, ``min(w1 * -ln p, w0 * -ln(1 - p))``. The qualifying
    set is ``[1 - e^(-q/w0), e^(-q/w1)]`` (``[1 - e^-q, e^-q]`` unweighted);
    when it is empty the fixed fallback band is used instead.
    """
    if q < 0:
        raise ValueError("q must be >= 0")
    w0, w1 = weights
    lo = -math.expm1(-q / w0)
    hi = math.exp(-q / w1)
    if lo > hi + 1e-12:
        return UncertaintyBand(*fallback)
    # tiny q rounds e^-q to 1; keep the band inside the open unit interval
    lo = max(min(lo, hi), float(np.nextafter(0.0, 1.0)))
    hi = min(hi, float(np.nextafter(1.0, 0.0)))
    return UncertaintyBand(lo, hi)


# --- collection ---------------------------------------------------------------


def collect_trajectories(env: Env, base: EnvParams, cfg: PrismConfig, key: int, count: int, start: int = 0) -> list[Trajectory]:
    """Trajectories ``start .. start+count-1`` of collection round ``key``.

    Each trajectory owns its stream, so a round's trajectory ``i`` is the same
    however many siblings are collected.
    """
    horizon = cfg.horizon or env.horizon
    out = []
    for i in range(start, start + count):
        rng = seeding.stream(cfg.seed, "trajectories", key, i)
        params = randomize_env(base, cfg.dr, rng)
        x0 = env.sample_initial_state(rng)
        seed = int(rng.integers(2**63 - 1))
        tid = "val-%03d" % i if key == VAL_KEY else "k%03d-t%03d" % (key, i)
        out.append(rollout_nominal(env, x0, params, horizon, seed, tid))
    return out


def _stack_params(per_sample: list[EnvParams]) -> EnvParams:
    first = per_sample[0]
    if all(p is first for p in per_sample):
        return first
    cols = {name: np.array([getattr(p, name) for p in per_sample], dtype=float) for name in ("damping_scale", "gain_scale", "friction_scale")}
    return first.replace(**cols)


def label_indices(
    env: Env, trajs: list[Trajectory], index_sets: list[list[int]], t_max: int, rng: np.random.Generator, iteration: int
) -> Dataset:
    """Label the chosen time steps of each trajectory in one vectorized batch."""
    states, ids, ts, params = [], [], [], []
    for tr, idx in zip(trajs, index_sets):
        states.append(tr.states[idx])
        ids += [tr.id] * len(idx)
        ts += list(idx)
        params += [tr.params] * len(idx)
    if not ids:
        return Dataset.empty(env.dimension)
    x = np.concatenate(states)
    labels = label_batch(env, x, _stack_params(params), t_max, rng)
    return Dataset(
        x,
        labels,
        np.array(ids),
        np.array(ts, dtype=np.int64),
        np.full(len(ids), iteration, dtype=np.int64),
        {tr.id: tr.params for tr in trajs},
    )


def fresh_monitor(env: Env, hyper: TrainHyper, seed: int, key: int) -> tuple[MonitorParams, TrainHyper]:
    rng = seeding.stream(seed, "training", key)
    theta0 = init_params(env.dimension, env.box, hyper.hidden, rng)
    return theta0, TrainHyper(**{**hyper.__dict__, "seed": int(rng.integers(2**63 - 1))})


def train_fresh(env: Env, d: Dataset, hyper: TrainHyper, seed: int, key: int) -> MonitorParams:
    theta0, h = fresh_monitor(env, hyper, seed, key)
    return train(theta0, d, h)


def validation_metrics(theta: MonitorParams, val: Dataset, alpha: float) -> dict:
    pred = forward(theta, val.states) >= alpha
    truth = val.labels == 1
    pct = lambda a, b: 100.0 * a / b if b else float("nan")  # noqa: E731
    return {
        "safe_acc": pct(int((pred & truth).sum()), int(truth.sum())),
        "unsafe_acc": pct(int((~pred & ~truth).sum()), int((~truth).sum())),
    }


def _metrics_row(k: int, buffer: Dataset, theta: MonitorParams, val: Dataset, cfg: PrismConfig, **extra) -> dict:
    row = {
        "iter": k,
        "total_data": len(buffer),
        "unsafe_ratio": 100.0 * buffer.unsafe_ratio,
        "num_traj": len(buffer.trajectory_ids),
        **validation_metrics(theta, val, cfg.alpha),
    }
    row.update(extra)
    return row


# --- algorithm ----------------------------------------------------------------


def initialize(env: Env, base: EnvParams, cfg: PrismConfig, hyper: TrainHyper) -> PrismState:
    """Initial coarse-stride buffer, frozen fine-stride validation set, first monitor."""
    val_trajs = collect_trajectories(env, base, cfg, VAL_KEY, cfg.n_val)
    val = label_indices(
        env, val_trajs, [uniform_sample(len(t), cfg.strides.fine) for t in val_trajs], cfg.t_max, seeding.stream(cfg.seed, "labeling", VAL_KEY), -1
    )
    trajs = collect_trajectories(env, base, cfg, 0, cfg.n0)
    d0 = label_indices(env, trajs, [uniform_sample(len(t), cfg.strides.coarse) for t in trajs], cfg.t_max, seeding.stream(cfg.seed, "labeling", 0), 0)
    widen = 0
    while d0.n_safe == 0 or d0.n_unsafe == 0:
        if widen == MAX_WIDEN:
            raise DegenerateDataset(f"initial buffer still single-class after {MAX_WIDEN} widenings")
        widen += 1
        log.warning("initial buffer is single-class; adding %d trajectories", cfg.n0)
        more = collect_trajectories(env, base, cfg, 0, cfg.n0, start=len(trajs))
        d0 = merge(d0, label_indices(env, more, [uniform_sample(len(t), cfg.strides.coarse) for t in more], cfg.t_max, seeding.stream(cfg.seed, "labeling", 0, widen), 0))
        trajs += more
    theta = train_fresh(env, d0, hyper, cfg.seed, 0)
    state = PrismState(0, theta, d0, val, trajectories=list(trajs))
    state.history.append(_metrics_row(0, d0, theta, val, cfg, n_new=len(d0)))
    return state


def importance_index_sets(
    theta: MonitorParams, trajs: list[Trajectory], band: UncertaintyBand, cfg: PrismConfig
) -> tuple[list[list[int]], list[bool]]:
    """Split trajectories into the importance share (region-adaptive strides)
    and the nominal share (coarse only). The first ``round(beta * n)`` get
    adaptive strides."""
    n_adaptive = math.floor(cfg.beta * len(trajs) + 0.5)
    in_region = lambda s: band.contains(forward(theta, s))  # noqa: E731
    sets, adaptive = [], []
    for i, tr in enumerate(trajs):
        if i < n_adaptive:
            sets.append(stride_sample(tr.states, cfg.strides, in_region))
        else:
            sets.append(uniform_sample(len(tr), cfg.strides.coarse))
        adaptive.append(i < n_adaptive)
    return sets, adaptive


def _band_fractions(theta, trajs, sets, adaptive, band, coarse) -> tuple[float, float]:
    """Share of sampled states inside the band: adaptive sets vs coarse striding of the same trajectories."""
    hit_a = tot_a = hit_c = tot_c = 0
    for tr, idx, is_a in zip(trajs, sets, adaptive):
        if not is_a:
            continue
        hit_a += int(band.contains(forward(theta, tr.states[idx])).sum())
        tot_a += len(idx)
        cidx = uniform_sample(len(tr), coarse)
        hit_c += int(band.contains(forward(theta, tr.states[cidx])).sum())
        tot_c += len(cidx)
    return (hit_a / tot_a if tot_a else float("nan")), (hit_c / tot_c if tot_c else float("nan"))


def refine_iteration(state: PrismState, env: Env, base: EnvParams, cfg: PrismConfig, hyper: TrainHyper) -> PrismState:
    k = state.k
    weights = class_weights(state.buffer)
    r = residuals(state.theta, state.val, weights)
    q = quantile(r, 1.0 - cfg.delta)
    band = uncertainty_band(q, cfg.fallback_band, weights if cfg.weighted_band else (1.0, 1.0))

    n_i = cfg.n_i
    new = Dataset.empty(env.dimension)
    trajs: list[Trajectory] = []
    sets: list[list[int]] = []
    adaptive: list[bool] = []
    for attempt in range(MAX_WIDEN + 1):
        batch = collect_trajectories(env, base, cfg, k + 1, n_i, start=len(trajs))
        b_sets, b_adaptive = importance_index_sets(state.theta, batch, band, cfg)
        sets += b_sets
        adaptive += b_adaptive
        labeled = label_indices(env, batch, b_sets, cfg.t_max, seeding.stream(cfg.seed, "labeling", k + 1, attempt), k + 1)
        new = merge(new, labeled)
        trajs += batch
        buffer = merge(state.buffer, new)
        if buffer.n_safe and buffer.n_unsafe:
            break
        log.warning("iteration %d: buffer is single-class; widening by %d trajectories", k, n_i)
    else:
        raise DegenerateDataset(f"iteration {k}: single-class buffer after {MAX_WIDEN} widenings")

    frac_a, frac_c = _band_fractions(state.theta, trajs, sets, adaptive, band, cfg.strides.coarse)
    if cfg.warm_start:
        h = TrainHyper(**{**hyper.__dict__, "seed": seeding.child_seed(cfg.seed, "training", k + 1)})
        theta = train(state.theta, buffer, h)
    else:
        theta = train_fresh(env, buffer, hyper, cfg.seed, k + 1)

    nxt = PrismState(k + 1, theta, buffer, state.val, q, list(state.history), state.trajectories + trajs)
    nxt.history.append(
        _metrics_row(
            k + 1, buffer, theta, state.val, cfg,
            n_new=len(new), q=q, band_lo=band.p_lo, band_hi=band.p_hi,
            band_frac_adaptive=frac_a, band_frac_coarse=frac_c,
        )
    )
    nxt.check()
    return nxt


def run_prism(
    env: Env, base: EnvParams, cfg: PrismConfig, hyper: TrainHyper = TrainHyper(), on_iteration=None
) -> tuple[MonitorParams, list[dict], PrismState]:
    """Full refinement loop; a pure function of its arguments.

    ``on_iteration(state)`` is called after the initial fit and after every
    refinement (checkpointing hook).
    """
    state = initialize(env, base, cfg, hyper)
    state.check()
    if on_iteration:
        on_iteration(state)
    for _ in range(cfg.k_iters):
        state = refine_iteration(state, env, base, cfg, hyper)
        if on_iteration:
            on_iteration(state)
        log.info("iter %d: %s", state.k, {k: state.history[-1][k] for k in ("total_data", "unsafe_ratio", "safe_acc", "unsafe_acc")})
    return state.theta, state.history, state


HISTORY_COLUMNS = ["iter", "total_data", "unsafe_ratio", "num_traj", "safe_acc", "unsafe_acc"]
