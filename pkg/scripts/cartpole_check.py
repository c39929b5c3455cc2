"""Cart-pole generalization check: PRISM per seed, grid agreement at alpha = 0.5.

    python3 scripts/cartpole_check.py [--seeds 0 1 2]
"""

import argparse
import time

from prism import seeding
from prism.env import CartPoleEnv, EnvParams
from prism.oracle import agreement, grid_oracle
from prism.refine import PrismConfig, run_prism


def main():
    p = argparse.ArgumentParser(description="cart-pole PRISM vs grid oracle")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--m", type=int, default=8)
    args = p.parse_args()
    env = CartPoleEnv()
    base = EnvParams(disturbance_sigma=args.sigma)
    grid = grid_oracle(env, base, (10, 10, 10, 10), args.m, 500, seeding.stream(0, "oracle"))
    for seed in args.seeds:
        t0 = time.perf_counter()
        theta, history, _ = run_prism(env, base, PrismConfig(seed=seed))
        s = agreement(theta, grid)
        print(
            f"seed {seed}: overall {s['overall_acc']:.1f} safe {s['safe_acc']:.1f} unsafe {s['unsafe_acc']:.1f} "
            f"buffer unsafe {history[-1]['unsafe_ratio']:.1f}%  {time.perf_counter() - t0:.0f}s",
            flush=True,
        )


if __name__ == "__main__":
    main()
