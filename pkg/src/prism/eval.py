"""Experiment harness: PRISM vs uniform baseline, DR ablation, stride and
threshold sweeps, per-step score traces and value-grid exports.

Every table is a list of ``MetricsRow``; ``write_table`` emits CSV and
``write_manifest`` a JSON record with the config fingerprint and the
git-style blob hash of each output file. Wall times go to a ``.timing.csv``
sidecar so that the tables themselves are reproducible byte for byte; the
manifest lists sidecars without hashing them.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .dataset import Dataset, balance, uniform_sample
from .env import Env, EnvParams
from .monitor import MonitorParams, TrainHyper, forward
from .oracle import LabeledGrid, agreement, cell_centers, grid_oracle, monitor_values
from .refine import PrismConfig, collect_trajectories, label_indices, train_fresh
from .rollout import DrConfig, Trajectory, estimate_vstop, randomize_env

BUDGET_TOL = 0.05
MIN_CLASS_CELLS = 100
ALPHAS = (0.3, 0.4, 0.47, 0.5, 0.53, 0.6, 0.7)
STRIDES = (60, 40, 20, 10)
TIMING_SUFFIX = ".timing.csv"


# --- rows and fingerprints ----------------------------------------------------


def _plain(obj):
    """JSON-ready copy of configs built from dataclasses, tuples and numpy values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def fingerprint(*parts) -> str:
    """Short sha256 of the canonical JSON form of the inputs."""
    blob = json.dumps(_plain(list(parts)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def blob_hash(data: bytes) -> str:
    """Same digest ``git hash-object`` would print for this content."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class MetricsRow:
    experiment: str
    fingerprint: str
    total_data: int | None
    unsafe_ratio: float | None  # percent
    num_traj: int | None
    safe_acc: float
    unsafe_acc: float
    false_safe_rate: float
    wall_time: float = 0.0
    tags: dict = field(default_factory=dict)  # seed, alpha, stride, dr, ...

    def __post_init__(self):
        for name in ("unsafe_ratio", "safe_acc", "unsafe_acc", "false_safe_rate"):
            v = getattr(self, name)
            if v is not None and not math.isnan(v) and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")
        for name in ("total_data", "num_traj"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "tags"}
        out.update(self.tags)
        return out


def metrics_row(experiment, fp, scores: dict, buffer: Dataset | None = None, wall=0.0, **tags) -> MetricsRow:
    return MetricsRow(
        experiment,
        fp,
        None if buffer is None else len(buffer),
        None if buffer is None else 100.0 * buffer.unsafe_ratio,
        None if buffer is None else len(buffer.trajectory_ids),
        scores["safe_acc"],
        scores["unsafe_acc"],
        scores["false_safe_rate"],
        wall,
        tags,
    )


def check_class_floor(grid: LabeledGrid, floor: int = MIN_CLASS_CELLS) -> None:
    """Each class must cover at least ``floor`` cells for its accuracy to be reported."""
    lab = grid.labels()
    if lab.sum() < floor or (~lab).sum() < floor:
        raise ValueError(f"test grid has {int(lab.sum())} safe / {int((~lab).sum())} unsafe cells; enlarge it")


def write_table(path: str | Path, rows: list[MetricsRow]) -> Path:
    """CSV of the rows without ``wall_time``; returns the path of the timing sidecar."""
    path = Path(path)
    dicts = [r.as_dict() for r in rows]
    cols: list[str] = []
    for d in dicts:
        cols += [k for k in d if k not in cols and k != "wall_time"]
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, restval="", extrasaction="ignore")
        w.writeheader()
        for d in dicts:
            w.writerow({k: ("" if v is None else v) for k, v in d.items()})
    side = path.with_name(path.stem + TIMING_SUFFIX)
    with side.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "experiment", "wall_time"])
        for i, r in enumerate(rows):
            w.writerow([i, r.experiment, f"{r.wall_time:.3f}"])
    return side


def write_manifest(out_dir: str | Path, config, seeds, outputs: list[str | Path]) -> Path:
    out_dir = Path(out_dir)
    files, volatile = {}, []
    for p in outputs:
        p = Path(p)
        name = str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p)
        if name.endswith(TIMING_SUFFIX):
            volatile.append(name)
        else:
            files[name] = blob_hash(p.read_bytes())
    manifest = {
        "config": _plain(config),
        "fingerprint": fingerprint(config),
        "seeds": _plain(seeds),
        "outputs": files,
        "volatile": sorted(volatile),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- uniform baseline at matched budget ---------------------------------------


@dataclass(frozen=True)
class Budget:
    num_traj: int
    stride: int

    def __post_init__(self):
        if self.num_traj < 1 or self.stride < 1:
            raise ValueError("budget needs num_traj >= 1 and stride >= 1")


def collect_uniform(env: Env, base: EnvParams, cfg: PrismConfig, budget: Budget) -> Dataset:
    """Round-0 trajectories ``0 .. num_traj-1`` sampled at one uniform stride.

    These are the same trajectories PRISM starts from, labeled from the same
    stream, so ``Budget(n0, coarse)`` reproduces PRISM's initial buffer.
    """
    trajs = collect_trajectories(env, base, cfg, 0, budget.num_traj)
    return label_indices(
        env, trajs, [uniform_sample(len(t), budget.stride) for t in trajs], cfg.t_max, seeding.stream(cfg.seed, "labeling", 0), 0
    )


def baseline_uniform(
    env: Env, base: EnvParams, cfg: PrismConfig, budget: Budget, grid: LabeledGrid | None = None, hyper: TrainHyper = TrainHyper()
) -> tuple[MonitorParams, MetricsRow]:
    """Collect, label and train once. Raises ``DegenerateDataset`` on a single-class buffer."""
    t0 = time.perf_counter()
    d = collect_uniform(env, base, cfg, budget)
    theta = train_fresh(env, d, hyper, cfg.seed, 0)
    scores = agreement(theta, grid) if grid is not None else {"safe_acc": float("nan"), "unsafe_acc": float("nan"), "false_safe_rate": float("nan")}
    fp = fingerprint("baseline", env.spec_dict(), base, cfg, budget, hyper)
    return theta, metrics_row("baseline", fp, scores, d, time.perf_counter() - t0, seed=cfg.seed, stride=budget.stride)


def matched_budget(env: Env, base: EnvParams, cfg: PrismConfig, target: int, stride: int | None = None, tol: float = BUDGET_TOL) -> Budget:
    """Smallest trajectory count whose uniform-stride sample count is closest to ``target``.

    Only nominal rollouts are simulated here (no labeling). Raises if the best
    count misses ``target`` by more than ``tol``.
    """
    stride = stride or cfg.strides.coarse
    total, best, best_gap = 0, 1, math.inf
    i = 0
    while total < target * (1 + tol) or i == 0:
        tr = collect_trajectories(env, base, cfg, 0, 1, start=i)[0]
        total += len(uniform_sample(len(tr), stride))
        i += 1
        if abs(total - target) < best_gap:
            best, best_gap = i, abs(total - target)
    if best_gap > tol * target:
        raise ValueError(f"no trajectory count within {tol:.0%} of {target} samples at stride {stride}")
    return Budget(best, stride)


# --- threshold sweep -----------------------------------------------------------


def alpha_sweep(theta, grid: LabeledGrid, alphas=ALPHAS, experiment: str = "alpha-sweep") -> list[MetricsRow]:
    """Score decisions at each threshold against labels fixed at ``grid.alpha``."""
    if any(not 0 < a <= 1 for a in alphas):
        raise ValueError("alphas must lie in (0, 1]")
    fp = fingerprint(experiment, grid.alpha, list(alphas))
    return [metrics_row(experiment, fp, agreement(theta, grid, a), alpha=a) for a in alphas]


def nested(theta, grid: LabeledGrid, alphas=ALPHAS) -> bool:
    """Stoppable predictions at a higher threshold are a subset of those at a lower one."""
    v = monitor_values(theta, grid.points())
    sets = [v >= a for a in sorted(alphas)]
    return all(not np.any(hi & ~lo) for lo, hi in zip(sets, sets[1:]))


# --- domain-randomization ablation ----------------------------------------------


def perturbed_grid(
    env: Env, base: EnvParams, dr: DrConfig, resolution, m: int, t_max: int, seed: int, key: int, box=None, alpha: float = 0.5
) -> LabeledGrid:
    """Oracle grid whose rollouts each draw their own plant multiplier from ``dr``.

    Oracle noise comes from the same stream for every ``dr``, so the
    ``axis=none`` grid equals the default grid built with ``stream(seed, "oracle")``.
    """
    n = int(np.prod(resolution)) * m
    params = randomize_env(base, dr, seeding.stream(seed, "dr", key), size=n)
    return grid_oracle(env, params, resolution, m, t_max, seeding.stream(seed, "oracle"), box=box, alpha=alpha)


def dr_ablation(
    theta, env: Env, base: EnvParams, dr_list: list[DrConfig], resolution, m: int, t_max: int, seed: int, box=None, alpha: float = 0.5
) -> list[MetricsRow]:
    """Zero-shot scores under each perturbation, plus how the truth moved.

    ``flipped_unsafe`` counts cells Stoppable by default and Unstoppable under
    the perturbation; ``false_safe_on_flipped`` is the share of false-safe
    errors landing on those cells.
    """
    ref = perturbed_grid(env, base, DrConfig(), resolution, m, t_max, seed, 0, box, alpha)
    pred = monitor_values(theta, ref.points()) >= alpha
    rows = []
    for i, dr in enumerate(dr_list):
        t0 = time.perf_counter()
        g = ref if dr.axis == "none" else perturbed_grid(env, base, dr, resolution, m, t_max, seed, i + 1, box, alpha)
        scores = agreement(theta, g, alpha)
        flipped = ref.labels() & ~g.labels()
        false_safe = pred & ~g.labels()
        on_flip = float(100.0 * (false_safe & flipped).sum() / false_safe.sum()) if false_safe.any() else float("nan")
        fp = fingerprint("dr-ablation", env.spec_dict(), base, dr, list(resolution), m, t_max, seed)
        rows.append(
            metrics_row(
                "dr-ablation", fp, scores, wall=time.perf_counter() - t0,
                dr=dr.label, overall_acc=scores["overall_acc"], flipped_unsafe=int(flipped.sum()), false_safe_on_flipped=on_flip,
            )
        )
    return rows


# --- stride sensitivity ----------------------------------------------------------


def stride_ablation(
    env: Env,
    base: EnvParams,
    cfg: PrismConfig,
    strides=STRIDES,
    seeds=range(5),
    num_traj: int = 10,
    grid: LabeledGrid | None = None,
    hyper: TrainHyper = TrainHyper(),
) -> list[MetricsRow]:
    """Uniform-stride training on class-balanced subsets, same trajectories per seed.

    Every stride's samples are a subset of one labeled pass at the gcd stride,
    so strides differ only in which labeled states they keep. ``total_data`` is
    the raw labeled count before balancing; ``n_balanced`` is what was trained on.
    """
    if any(s < 1 for s in strides):
        raise ValueError("strides must be >= 1")
    base_stride = math.gcd(*strides)
    rows = []
    for seed in seeds:
        c = dataclasses.replace(cfg, seed=seed)
        trajs = collect_trajectories(env, base, c, 0, num_traj)
        full = label_indices(
            env, trajs, [uniform_sample(len(t), base_stride) for t in trajs], c.t_max, seeding.stream(seed, "labeling", 0), 0
        )
        for stride in strides:
            t0 = time.perf_counter()
            d = full.subset(np.flatnonzero(full.time_index % stride == 0))
            bal = balance(d, seeding.stream(seed, "balance", stride))
            theta = train_fresh(env, bal, hyper, seed, stride)
            scores = agreement(theta, grid)
            fp = fingerprint("stride-ablation", env.spec_dict(), base, c, stride, num_traj, hyper)
            rows.append(
                metrics_row("stride-ablation", fp, scores, d, time.perf_counter() - t0, seed=seed, stride=stride, n_balanced=len(bal))
            )
    return rows


# --- score traces and value-grid exports ----------------------------------------


def score_trace(
    theta, traj: Trajectory, env: Env, t_max: int, m: int, rng: np.random.Generator, alpha: float = 0.5
) -> list[tuple[int, float, float, int]]:
    """Per step: ``(t, monitor value, oracle V_stop estimate, oracle label at alpha)``."""
    v_hat = monitor_values(theta, traj.states)
    out = []
    for t, x in enumerate(traj.states):
        v = estimate_vstop(env, x, traj.params, t_max, m, rng)
        out.append((t, float(v_hat[t]), v, int(v >= alpha)))
    return out


def first_crossings(trace, alpha: float = 0.5) -> tuple[int | None, int | None]:
    """First step with oracle label 0 and first step with monitor value below ``alpha``."""
    t_oracle = next((t for t, _, _, lab in trace if lab == 0), None)
    t_monitor = next((t for t, v, _, _ in trace if v < alpha), None)
    return t_oracle, t_monitor


def write_trace(path: str | Path, trace) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "v_hat", "v_oracle", "oracle_label"])
        for t, v, vo, lab in trace:
            w.writerow([t, repr(v), repr(vo), lab])


def value_slice(theta, env: Env, dims=(0, 1), resolution=(200, 200), fixed=None, box=None) -> tuple[list[np.ndarray], np.ndarray]:
    """Monitor values on a 2-D slice of the state box; other coordinates held at ``fixed``."""
    box = np.asarray(env.box if box is None else box, dtype=float)
    fixed = np.zeros(env.dimension) if fixed is None else np.asarray(fixed, dtype=float)
    axes = cell_centers(box[list(dims)], resolution)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.tile(fixed, (mesh[0].size, 1))
    for j, d in enumerate(dims):
        pts[:, d] = mesh[j].ravel()
    return axes, monitor_values(theta, pts).reshape(len(axes[0]), len(axes[1]))


def export_value_grid(theta, env: Env, path: str | Path, dims=(0, 1), resolution=(200, 200), fixed=None, box=None) -> None:
    """CSV of the monitor field on a 2-D slice, one row per cell."""
    axes, values = value_slice(theta, env, dims, resolution, fixed, box)
    names = [env.coord_names[d] for d in dims]
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow([*names, "v_hat"])
        for i, a in enumerate(axes[0]):
            for j, b in enumerate(axes[1]):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(values[i, j]))])


def contour_distance_braking(theta, env, resolution=(200, 200), alpha: float = 0.5, box=None) -> float:
    """Largest distance, in cells, from a monitor decision flip to the analytic
    stopping parabola ``p = d_obs - v^2 / (2 a_max)``, for ``v > 0``.

    Measured along the position axis: for each velocity column, the first
    cell predicted Unstoppable versus the first analytically unstoppable cell.
    """
    axes, values = value_slice(theta, env, (0, 1), resolution, box=box)
    p, v = axes
    dp = p[1] - p[0]
    worst = 0.0
    for j, vj in enumerate(v):
        if vj <= env.v_tol or vj / env.a_max > 5.0:
            continue
        p_star = env.d_obs - vj**2 / (2 * env.a_max)
        col = values[:, j] < alpha
        if not col.any():
            worst = max(worst, (p[-1] - p_star) / dp)
            continue
        worst = max(worst, abs(p[np.argmax(col)] - p_star) / dp)
    return worst
