"""Run every experiment at its default settings into one output tree.

    python3 scripts/reproduce.py --out out/ [--only baseline dr-ablation] [--env braking]

The evaluation-only experiments reuse the monitor trained by ``run``.
"""

import argparse
import sys
import time
from pathlib import Path

from prism.cli import main

ORDER = ["oracle", "run", "alpha-sweep", "trace", "grid", "dr-ablation", "stride-ablation", "baseline"]
NEEDS_MONITOR = {"alpha-sweep", "trace", "grid", "dr-ablation"}


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="out")
    p.add_argument("--env", default="braking", choices=["braking", "cartpole"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", nargs="*", choices=ORDER)
    return p.parse_args(argv)


def run(argv=None) -> int:
    args = parse_args(argv)
    root = Path(args.out) / args.env
    todo = [e for e in ORDER if not args.only or e in args.only]
    ckpt = root / "run" / "monitor.bin"
    if NEEDS_MONITOR & set(todo) and "run" not in todo and not ckpt.exists():
        todo.insert(0, "run")
    for exp in todo:
        cmd = [exp, "--env", args.env, "--seed", str(args.seed), "--out", str(root / exp)]
        if exp in NEEDS_MONITOR:
            cmd += ["--monitor", str(ckpt)]
        t0 = time.perf_counter()
        rc = main(cmd)
        print(f"{exp:16s} exit {rc}  {time.perf_counter() - t0:6.1f}s  -> {root / exp}", flush=True)
        if rc:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run())
