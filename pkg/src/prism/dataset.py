"""Labeled trigger-state buffers, stride sampling and the on-disk record format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np


class DegenerateDataset(ValueError):
    """Raised when a buffer holds only one class; widen sampling and retry."""


class StrideConfig(NamedTuple):
    coarse: int = 20
    fine: int = 2

    def validate(self) -> StrideConfig:
        if not 1 <= self.fine < self.coarse:
            raise ValueError(f"strides need 1 <= fine < coarse, got fine={self.fine} coarse={self.coarse}")
        return self


class TriggerSample(NamedTuple):
    state: np.ndarray
    label: int
    traj_id: str
    time_index: int
    iteration: int


def _empty(dim: int) -> dict:
    return dict(
        states=np.zeros((0, dim)),
        labels=np.zeros(0, dtype=np.int8),
        traj_ids=np.zeros(0, dtype=str),
        time_index=np.zeros(0, dtype=np.int64),
        iteration=np.zeros(0, dtype=np.int64),
    )


@dataclass(frozen=True)
class Dataset:
    """Column store of trigger samples. Label 1 = stoppable (Safe), 0 = Unsafe.

    Treated as immutable; ``merge`` returns a new buffer.
    """

    states: np.ndarray
    labels: np.ndarray
    traj_ids: np.ndarray
    time_index: np.ndarray
    iteration: np.ndarray
    # per-trajectory plant parameters, kept for the record file
    traj_params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.states) == len(self.traj_ids) == len(self.time_index) == len(self.iteration) == n):
            raise ValueError("column length mismatch")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        keys = set(zip(self.traj_ids.tolist(), self.time_index.tolist()))
        if len(keys) != n:
            raise ValueError("duplicate (traj_id, time_index) key")

    @classmethod
    def empty(cls, dim: int) -> Dataset:
        return cls(**_empty(dim))

    @classmethod
    def from_samples(cls, samples, dim: int | None = None) -> Dataset:
        samples = list(samples)
        if not samples:
            return cls.empty(dim or 0)
        return cls(
            states=np.array([s.state for s in samples], dtype=float),
            labels=np.array([s.label for s in samples], dtype=np.int8),
            traj_ids=np.array([s.traj_id for s in samples]),
            time_index=np.array([s.time_index for s in samples], dtype=np.int64),
            iteration=np.array([s.iteration for s in samples], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[TriggerSample]:
        for i in range(len(self)):
            yield TriggerSample(
                self.states[i], int(self.labels[i]), str(self.traj_ids[i]), int(self.time_index[i]), int(self.iteration[i])
            )

    @property
    def n_safe(self) -> int:
        return int(self.labels.sum())

    @property
    def n_unsafe(self) -> int:
        return len(self) - self.n_safe

    @property
    def counts(self) -> tuple[int, int]:
        return self.n_safe, self.n_unsafe

    @property
    def unsafe_ratio(self) -> float:
        return self.n_unsafe / len(self) if len(self) else 0.0

    @property
    def trajectory_ids(self) -> set[str]:
        return set(self.traj_ids.tolist())

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        ids = set(self.traj_ids[idx].tolist())
        return Dataset(
            self.states[idx],
            self.labels[idx],
            self.traj_ids[idx],
            self.time_index[idx],
            self.iteration[idx],
            {k: v for k, v in self.traj_params.items() if k in ids},
        )

    def equals(self, other: Dataset) -> bool:
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.traj_ids, other.traj_ids)
            and np.array_equal(self.time_index, other.time_index)
            and np.array_equal(self.iteration, other.iteration)
        )


def stride_sample(states: np.ndarray, strides: StrideConfig, in_region: Callable[[np.ndarray], np.ndarray]) -> list[int]:
    """Index set along one trajectory: fine stride where the next fine-step
    state lies in the region, coarse stride otherwise.

    Membership is tested at the candidate ``t + fine`` so a region entered
    between two coarse samples is picked up on the way out as well as in.
    """
    strides.validate()
    n = len(states)
    if n == 0:
        raise ValueError("empty trajectory")
    mask = np.asarray(in_region(np.asarray(states)), dtype=bool)
    out = []
    t = 0
    while t < n:
        out.append(t)
        nxt = t + strides.fine
        t = nxt if nxt < n and mask[nxt] else t + strides.coarse
    return out


def uniform_sample(n: int, stride: int) -> list[int]:
    return list(range(0, n, stride))


def class_weights(d: Dataset) -> tuple[float, float]:
    """Inverse-frequency weights ``n / (2 n_y)``; a balanced set gets (1, 1)."""
    n1 = d.n_safe
    n0 = len(d) - n1
    if n0 == 0 or n1 == 0:
        raise DegenerateDataset(f"single-class dataset (n_unsafe={n0}, n_safe={n1})")
    n = n0 + n1
    return n / (2 * n0), n / (2 * n1)


def merge(prev: Dataset, new: Dataset) -> Dataset:
    if len(new) == 0:
        return prev
    if len(prev) == 0:
        return new
    params = dict(prev.traj_params)
    params.update(new.traj_params)
    # Dataset.__post_init__ rejects duplicate keys
    return Dataset(
        np.concatenate([prev.states, new.states]),
        np.concatenate([prev.labels, new.labels]),
        np.concatenate([prev.traj_ids, new.traj_ids]),
        np.concatenate([prev.time_index, new.time_index]),
        np.concatenate([prev.iteration, new.iteration]),
        params,
    )


def balance(d: Dataset, rng: np.random.Generator) -> Dataset:
    """Subsample the majority class uniformly to the minority count (order kept)."""
    pos = np.flatnonzero(d.labels == 1)
    neg = np.flatnonzero(d.labels == 0)
    k = min(len(pos), len(neg))
    keep = np.concatenate([rng.choice(pos, k, replace=False), rng.choice(neg, k, replace=False)])
    return d.subset(np.sort(keep))


# --- line-delimited record file ------------------------------------------------


def write_records(path: str | Path, d: Dataset) -> None:
    """One JSON object per sample, plus a ``.meta.json`` sidecar of counts."""
    path = Path(path)
    with path.open("w") as f:
        for s in d:
            params = d.traj_params.get(s.traj_id)
            rec = {
                "id": s.traj_id,
                "t": s.time_index,
                "state": [float(v) for v in s.state],
                "label": s.label,
                "iteration": s.iteration,
                "env_params": params.as_dict() if params is not None else None,
            }
            f.write(json.dumps(rec) + "\n")
    write_meta(path.with_suffix(".meta.json"), d)


def read_records(path: str | Path) -> Dataset:
    from .env import EnvParams

    samples, params = [], {}
    with Path(path).open() as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(TriggerSample(np.array(rec["state"], dtype=float), rec["label"], rec["id"], rec["t"], rec["iteration"]))
            if rec.get("env_params") is not None and rec["id"] not in params:
                params[rec["id"]] = EnvParams(**rec["env_params"])
    d = Dataset.from_samples(samples)
    return Dataset(d.states, d.labels, d.traj_ids, d.time_index, d.iteration, params)


def iteration_counts(d: Dataset) -> list[dict]:
    """Cumulative per-iteration buffer statistics (Total Data / Unsafe Ratio / Num. Traj.)."""
    rows = []
    for k in sorted(set(d.iteration.tolist())):
        m = d.iteration <= k
        rows.append(
            {
                "iteration": k,
                "total_data": int(m.sum()),
                "unsafe_ratio": float((d.labels[m] == 0).mean()),
                "num_traj": len(set(d.traj_ids[m].tolist())),
            }
        )
    return rows


def write_meta(path: str | Path, d: Dataset) -> None:
    Path(path).write_text(json.dumps({"n_safe": d.n_safe, "n_unsafe": d.n_unsafe, "iterations": iteration_counts(d)}, indent=2))
