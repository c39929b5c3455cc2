"""Feed-forward stoppability monitor: tanh MLP with a sigmoid head.

Inputs are rescaled to [-1, 1] with the environment's declared state box,
which is stored alongside the weights so a checkpoint is self-contained.
Training is weighted binary cross-entropy with plain momentum SGD.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, class_weights

EPS = 1e-7
MAGIC = b"PRISMMON"
FORMAT_VERSION = 1

STOPPABLE = "Stoppable"
UNSTOPPABLE = "Unstoppable"


@dataclass
class MonitorParams:
    weights: list[np.ndarray]  # each (fan_in, fan_out)
    biases: list[np.ndarray]  # each (fan_out,)
    lo: np.ndarray  # input box lower corner
    hi: np.ndarray  # input box upper corner
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> MonitorParams:
        return MonitorParams(list(arrays[0::2]), list(arrays[1::2]), self.lo, self.hi, dict(self.meta))

    def copy(self) -> MonitorParams:
        return self.with_arrays([a.copy() for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def equals(self, other: MonitorParams) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    momentum: float = 0.9
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1 or not 0 <= self.momentum < 1:
            raise ValueError("invalid training hyperparameters")


def init_params(dim: int, box, hidden=(64, 64), rng: np.random.Generator | None = None, zero_head: bool = False) -> MonitorParams:
    """Glorot-normal weights, zero biases."""
    rng = rng or np.random.default_rng(0)
    box = np.asarray(box, dtype=float)
    sizes = [dim, *hidden, 1]
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        ws.append(rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    if zero_head:
        ws[-1][:] = 0.0
    return MonitorParams(ws, bs, box[:, 0].copy(), box[:, 1].copy())


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _normalize(theta: MonitorParams, x: np.ndarray) -> np.ndarray:
    return 2.0 * (x - theta.lo) / (theta.hi - theta.lo) - 1.0


def _forward_cache(theta: MonitorParams, x: np.ndarray):
    if x.shape[-1] != theta.input_dim:
        raise ValueError(f"state dim {x.shape[-1]} does not match monitor input dim {theta.input_dim}")
    acts = [_normalize(theta, x)]
    for w, b in zip(theta.weights[:-1], theta.biases[:-1]):
        acts.append(np.tanh(acts[-1] @ w + b))
    z = (acts[-1] @ theta.weights[-1] + theta.biases[-1])[:, 0]
    return acts, z


def forward(theta: MonitorParams, x) -> np.ndarray | float:
    """Monitor output in (0, 1) for one state ``(dim,)`` or a batch ``(n, dim)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    _, z = _forward_cache(theta, np.atleast_2d(x))
    v = _sigmoid(z)
    return float(v[0]) if single else v


def bce(v, y, eps: float = EPS):
    v = np.clip(v, eps, 1 - eps)
    return -(y * np.log(v) + (1 - y) * np.log(1 - v))


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Dataset):
        return batch.states, batch.labels.astype(float)
    if isinstance(batch, tuple) and len(batch) == 2:
        return np.atleast_2d(np.asarray(batch[0], dtype=float)), np.asarray(batch[1], dtype=float)
    batch = list(batch)
    return np.array([s.state for s in batch], dtype=float), np.array([s.label for s in batch], dtype=float)


def loss(theta: MonitorParams, batch, weights=(1.0, 1.0)) -> float:
    """Mean class-weighted BCE. ``batch`` is a Dataset, TriggerSamples or ``(X, y)``."""
    x, y = _batch_arrays(batch)
    if len(y) == 0:
        raise ValueError("empty batch")
    w = np.where(y == 1, weights[1], weights[0])
    return float(np.mean(w * bce(forward(theta, x), y)))


def grad(theta: MonitorParams, batch, weights=(1.0, 1.0)) -> list[np.ndarray]:
    """Exact gradient of ``loss``, ordered like ``MonitorParams.arrays()``."""
    x, y = _batch_arrays(batch)
    return _grad_arrays(theta, x, y, np.where(y == 1, weights[1], weights[0]))[0]


def _grad_arrays(theta, x, y, w):
    """Backprop; also returns the summed weighted loss of the batch."""
    acts, z = _forward_cache(theta, x)
    v = _sigmoid(z)
    n = len(y)
    # d/dz of -log clip(sigmoid(z)); the clip is flat outside (eps, 1 - eps)
    live = (v > EPS) & (v < 1 - EPS)
    dz = (w * (v - y) * live / n)[:, None]
    grads = []
    delta = dz
    for layer in range(len(theta.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[layer].T @ delta)
        if layer:
            delta = (delta @ theta.weights[layer].T) * (1.0 - acts[layer] ** 2)
    return grads[::-1], float(np.sum(w * bce(v, y)))


def train(theta0: MonitorParams, d: Dataset, h: TrainHyper, weights=None) -> MonitorParams:
    """Minibatch momentum SGD; the epoch-mean training loss is kept in ``meta``.

    Shuffles come from ``h.seed`` so equal inputs give bit-identical weights.
    """
    if weights is None:
        weights = class_weights(d)
    x = d.states
    y = d.labels.astype(float)
    w = np.where(y == 1, weights[1], weights[0])
    rng = np.random.default_rng(h.seed)
    params = [a.copy() for a in theta0.arrays()]
    vel = [np.zeros_like(a) for a in params]
    theta = theta0.with_arrays(params)
    n = len(y)
    history = []
    for _ in range(h.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, h.batch_size):
            idx = order[start : start + h.batch_size]
            g, batch_loss = _grad_arrays(theta, x[idx], y[idx], w[idx])
            total += batch_loss
            for p, v, gi in zip(params, vel, g):
                v *= h.momentum
                v -= h.learning_rate * gi
                p += v
        history.append(total / n)
    theta.meta = {"train_loss": history, "class_weights": [float(weights[0]), float(weights[1])], "n_train": n}
    return theta


def decide(v, alpha: float):
    """Stoppable iff ``v >= alpha``. Vectorized input gives a boolean array (True = Stoppable)."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if np.ndim(v):
        return np.asarray(v) >= alpha
    return STOPPABLE if v >= alpha else UNSTOPPABLE


# --- checkpoint format ---------------------------------------------------------
#
#   MAGIC (8 bytes) | version u32 | n_layers u32 | (fan_in u32, fan_out u32) * n_layers
#   then per layer: weights row-major f64, biases f64   (all little-endian)
#
# with a JSON sidecar ``<path>.json`` holding the input box and metadata.


def save_params(theta: MonitorParams, path: str | Path) -> None:
    path = Path(path)
    head = MAGIC + struct.pack("<II", FORMAT_VERSION, len(theta.weights))
    for fi, fo in theta.shapes:
        head += struct.pack("<II", fi, fo)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in theta.arrays())
    path.write_bytes(head + body)
    side = {"format_version": FORMAT_VERSION, "lo": theta.lo.tolist(), "hi": theta.hi.tolist(), "meta": theta.meta}
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load_params(path: str | Path) -> MonitorParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a monitor checkpoint")
    version, n_layers = struct.unpack_from("<II", raw, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off = 16
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", raw, off))
        off += 8
    ws, bs = [], []
    for fi, fo in shapes:
        ws.append(np.frombuffer(raw, "<f8", fi * fo, off).reshape(fi, fo).astype(float))
        off += 8 * fi * fo
        bs.append(np.frombuffer(raw, "<f8", fo, off).astype(float))
        off += 8 * fo
    side = json.loads(Path(str(path) + ".json").read_text())
    return MonitorParams(ws, bs, np.array(side["lo"]), np.array(side["hi"]), side.get("meta", {}))
