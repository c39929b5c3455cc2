"""Per-seed PRISM vs uniform comparison from a ``baseline`` table.csv.

    python3 scripts/summarize_baseline.py out/braking/baseline/table.csv
"""

import csv
import sys
from collections import defaultdict


def load(path):
    by_seed = defaultdict(dict)
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            by_seed[int(row["seed"])][row["experiment"]] = row
    return by_seed


def summarize(path) -> str:
    by_seed = load(path)
    lines = [f"{'seed':>4} {'n_prism':>8} {'n_base':>8} {'unsafe_p':>9} {'unsafe_b':>9} {'fs_p':>6} {'fs_b':>6}"]
    wins_u = wins_fs = 0
    for seed in sorted(by_seed):
        p, b = by_seed[seed]["prism"], by_seed[seed]["baseline"]
        up, ub = float(p["unsafe_acc"]), float(b["unsafe_acc"])
        fp, fb = float(p["false_safe_rate"]), float(b["false_safe_rate"])
        wins_u += up >= ub
        wins_fs += fp <= fb
        lines.append(f"{seed:>4} {p['total_data']:>8} {b['total_data']:>8} {up:9.2f} {ub:9.2f} {fp:6.2f} {fb:6.2f}")
    n = len(by_seed)
    lines.append(f"PRISM unsafe_acc >= baseline: {wins_u}/{n}; false_safe_rate <= baseline: {wins_fs}/{n}")
    return "\n".join(lines)


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    print(summarize(sys.argv[1]))
