"""Root-seed splitting.

All randomness descends from one integer root seed. A stream is addressed by
``(root, purpose, *keys)`` and built as ``SeedSequence([root, code, *keys])``
where ``code`` is the fixed integer below. Keys are non-negative ints
(iteration index, trajectory index, experiment index, ...).
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "trajectories": 1,  # initial states and per-trajectory noise seeds
    "labeling": 2,  # fallback rollout noise
    "training": 3,  # weight init and minibatch shuffles
    "dr": 4,  # domain-randomization draws
    "oracle": 5,  # grid oracle rollouts
    "balance": 6,  # class-balancing subsamples
}


def stream(root: int, purpose: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root), PURPOSES[purpose], *map(int, keys)]))


def child_seed(root: int, purpose: str, *keys: int) -> int:
    """A plain 63-bit integer seed, for objects that store their own seed."""
    return int(stream(root, purpose, *keys).integers(2**63 - 1))
