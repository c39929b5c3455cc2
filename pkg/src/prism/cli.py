"""Command-line entry point.

    prism run --env braking --iters 10 --seed 7 --out out/run7
    prism baseline --config exp.toml
    prism alpha-sweep --monitor out/run7/monitor.bin

Exit codes: 0 success, 2 configuration error, 3 runtime or degenerate-data error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import eval as ev
from . import seeding
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, dump_toml, parse_config, parse_value
from .dataset import DegenerateDataset, write_records
from .monitor import MonitorParams, load_params, save_params
from .oracle import LabeledGrid, agreement, grid_oracle
from .refine import HISTORY_COLUMNS, VAL_KEY, PrismState, collect_trajectories, run_prism
from .rollout import DrConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
TRACE_KEY = VAL_KEY + 1  # nominal trajectories drawn for score traces

log = logging.getLogger("prism")

FLAG_KEYS = {
    "env": "env.name",
    "seed": "seed",
    "iters": "prism.k_iters",
    "beta": "prism.beta",
    "delta": "prism.delta",
    "alpha": "prism.alpha",
    "out": "out",
    "monitor": "monitor",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prism", description="Stoppability monitor refinement experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="TOML file with flat dotted keys (prism.beta = 0.5)")
    p.add_argument("--env", choices=["braking", "cartpole"])
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, help="refinement iterations K")
    p.add_argument("--beta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("--monitor", help="checkpoint to evaluate instead of training one")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any config key, TOML-valued")
    p.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def flags_to_values(args: argparse.Namespace) -> dict:
    values = {"experiment": args.experiment}
    for item in args.set:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = parse_value(text.strip())
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    return values


# --- plan ------------------------------------------------------------------


def plan(cfg: ExperimentConfig) -> dict:
    """Trajectory counts and label-budget bounds for one PRISM run."""
    p = cfg.prism
    horizon = p.horizon or cfg.env.horizon
    per_coarse = horizon // p.strides.coarse + 1
    per_fine = horizon // p.strides.fine + 1
    n_adapt = int(np.floor(p.beta * p.n_i + 0.5))
    return {
        "experiment": cfg.experiment,
        "env": cfg.env.name,
        "seeds": cfg.seeds if cfg.experiment in ("baseline", "stride-ablation") else [p.seed],
        "trajectories": {"validation": p.n_val, "initial": p.n0, "per_iteration": p.n_i, "total": p.n_val + p.n0 + p.k_iters * p.n_i},
        "labels_max": {
            "validation": p.n_val * per_fine,
            "initial": p.n0 * per_coarse,
            "training_total": p.n0 * per_coarse + p.k_iters * (n_adapt * per_fine + (p.n_i - n_adapt) * per_coarse),
        },
        "oracle_rollouts": int(np.prod(cfg.get("oracle.resolution"))) * cfg.get("oracle.m"),
        "out": str(cfg.out),
    }


# --- shared steps -------------------------------------------------------------


def oracle_grid(cfg: ExperimentConfig, params=None) -> LabeledGrid:
    g = grid_oracle(
        cfg.env,
        params or cfg.params,
        cfg.get("oracle.resolution"),
        cfg.get("oracle.m"),
        cfg.prism.t_max,
        seeding.stream(cfg.prism.seed, "oracle"),
        box=cfg.get("oracle.box"),
        alpha=cfg.prism.alpha,
    )
    ev.check_class_floor(g)
    return g


def train_prism(cfg: ExperimentConfig, ckpt_dir: Path | None = None, seed: int | None = None):
    p = cfg.prism if seed is None else dataclasses.replace(cfg.prism, seed=seed)

    def save(state: PrismState):
        if ckpt_dir is not None:
            save_params(state.theta, ckpt_dir / f"monitor_k{state.k:03d}.bin")

    return run_prism(cfg.env, cfg.params, p, cfg.hyper, on_iteration=save)


def monitor_for(cfg: ExperimentConfig) -> MonitorParams:
    if cfg.get("monitor"):
        return load_params(cfg.get("monitor"))
    theta, _, _ = train_prism(cfg)
    return theta


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


# --- experiments ----------------------------------------------------------------


def cmd_run(cfg: ExperimentConfig, out: Path) -> list[Path]:
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    theta, history, state = train_prism(cfg, ckpt)
    save_params(theta, out / "monitor.bin")
    _write_csv(out / "history.csv", history, HISTORY_COLUMNS)
    extra = [c for c in history[-1] if c not in HISTORY_COLUMNS]
    _write_csv(out / "history_full.csv", history, HISTORY_COLUMNS + extra)
    write_records(out / "buffer.jsonl", state.buffer)
    grid = oracle_grid(cfg)
    scores = agreement(theta, grid)
    (out / "scores.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")
    log.info("final grid agreement: %s", scores)
    files = [out / "monitor.bin", out / "monitor.bin.json", out / "history.csv", out / "history_full.csv", out / "buffer.jsonl", out / "scores.json"]
    return files + sorted(ckpt.iterdir())


def cmd_baseline(cfg: ExperimentConfig, out: Path) -> list[Path]:
    """PRISM vs uniform-stride training at matched label count, one pair per seed."""
    rows = []
    stride = cfg.get("baseline.stride") or cfg.prism.strides.coarse
    grid = oracle_grid(cfg)
    for seed in cfg.seeds:
        p = dataclasses.replace(cfg.prism, seed=seed)
        t0 = time.perf_counter()
        theta, history, state = train_prism(cfg, seed=seed)
        fp = ev.fingerprint("prism", cfg.env.spec_dict(), cfg.params, p, cfg.hyper)
        rows.append(ev.metrics_row("prism", fp, agreement(theta, grid), state.buffer, time.perf_counter() - t0, seed=seed))
        n = cfg.get("baseline.num_traj")
        budget = ev.Budget(n, stride) if n else ev.matched_budget(cfg.env, cfg.params, p, len(state.buffer), stride)
        _, row = ev.baseline_uniform(cfg.env, cfg.params, p, budget, grid, cfg.hyper)
        rows.append(row)
        log.info("seed %d: prism unsafe_acc %.2f vs baseline %.2f", seed, rows[-2].unsafe_acc, row.unsafe_acc)
    side = ev.write_table(out / "table.csv", rows)
    return [out / "table.csv", side]


def cmd_alpha_sweep(cfg: ExperimentConfig, out: Path) -> list[Path]:
    theta = monitor_for(cfg)
    grid = oracle_grid(cfg)
    rows = ev.alpha_sweep(theta, grid, cfg.get("sweep.alphas"))
    for r in rows:
        r.tags["nested"] = ev.nested(theta, grid, cfg.get("sweep.alphas"))
    side = ev.write_table(out / "table.csv", rows)
    return [out / "table.csv", side]


def cmd_dr_ablation(cfg: ExperimentConfig, out: Path) -> list[Path]:
    theta = monitor_for(cfg)
    drs = [DrConfig(*e) for e in cfg.get("dr.configs")]
    rows = ev.dr_ablation(
        theta, cfg.env, cfg.params, drs, cfg.get("oracle.resolution"), cfg.get("oracle.m"), cfg.prism.t_max, cfg.prism.seed,
        box=cfg.get("oracle.box"), alpha=cfg.prism.alpha,
    )
    side = ev.write_table(out / "table.csv", rows)
    return [out / "table.csv", side]


def cmd_stride_ablation(cfg: ExperimentConfig, out: Path) -> list[Path]:
    grid = oracle_grid(cfg)
    rows = ev.stride_ablation(
        cfg.env, cfg.params, cfg.prism, cfg.get("strides.values"), cfg.seeds, cfg.get("strides.num_traj"), grid, cfg.hyper
    )
    side = ev.write_table(out / "table.csv", rows)
    return [out / "table.csv", side]


def cmd_oracle(cfg: ExperimentConfig, out: Path) -> list[Path]:
    grid = oracle_grid(cfg)
    grid.to_csv(out / "oracle_grid.csv")
    return [out / "oracle_grid.csv"]


def cmd_trace(cfg: ExperimentConfig, out: Path) -> list[Path]:
    theta = monitor_for(cfg)
    idx = cfg.get("trace.index")
    traj = collect_trajectories(cfg.env, cfg.params, cfg.prism, TRACE_KEY, 1, start=idx)[0]
    trace = ev.score_trace(
        theta, traj, cfg.env, cfg.prism.t_max, cfg.get("trace.m"), seeding.stream(cfg.prism.seed, "oracle", TRACE_KEY, idx), cfg.prism.alpha
    )
    ev.write_trace(out / "trace.csv", trace)
    t_oracle, t_monitor = ev.first_crossings(trace, cfg.prism.alpha)
    log.info("first oracle Unstoppable step %s, first monitor crossing %s", t_oracle, t_monitor)
    return [out / "trace.csv"]


def cmd_grid(cfg: ExperimentConfig, out: Path) -> list[Path]:
    theta = monitor_for(cfg)
    ev.export_value_grid(
        theta, cfg.env, out / "value_grid.csv", tuple(cfg.get("grid.dims")), tuple(cfg.get("grid.resolution")), cfg.get("grid.fixed"),
        cfg.get("oracle.box"),
    )
    return [out / "value_grid.csv"]


COMMANDS = {
    "run": cmd_run,
    "baseline": cmd_baseline,
    "alpha-sweep": cmd_alpha_sweep,
    "dr-ablation": cmd_dr_ablation,
    "stride-ablation": cmd_stride_ablation,
    "oracle": cmd_oracle,
    "trace": cmd_trace,
    "grid": cmd_grid,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = parse_config(args.config, flags_to_values(args))
    except ConfigError as e:
        print(f"prism: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.dry_run:
        print(json.dumps(plan(cfg), indent=2))
        return EXIT_OK

    out = cfg.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(dump_toml(cfg.flat))
        files = COMMANDS[cfg.experiment](cfg, out)
        ev.write_manifest(out, cfg.flat, {"root": cfg.prism.seed, "seeds": cfg.seeds}, [out / "config.toml", *files])
    except (DegenerateDataset, ValueError, RuntimeError, OSError) as e:
        print(f"prism: {cfg.experiment} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
