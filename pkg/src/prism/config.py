"""Experiment configuration: flat dotted keys, TOML files, layered defaults.

Resolution order is flags > file > per-env defaults > global defaults. Every
key must appear in ``DEFAULTS``; anything else is rejected by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import tomli

from .dataset import StrideConfig
from .env import Env, EnvParams, make_env
from .monitor import TrainHyper
from .refine import PrismConfig
from .rollout import WIDE_RANGES, DrConfig

EXPERIMENTS = ("run", "baseline", "alpha-sweep", "dr-ablation", "stride-ablation", "oracle", "trace", "grid")

# None means "fall back to the env default" (see ENV_DEFAULTS) or "not set".
DEFAULTS: dict[str, object] = {
    "experiment": "run",
    "out": None,
    "seed": 0,
    "seeds": [0, 1, 2, 3, 4],
    "monitor": None,  # existing checkpoint for the evaluation-only experiments
    "env.name": "braking",
    "env.damping_scale": 1.0,
    "env.gain_scale": 1.0,
    "env.friction_scale": 1.0,
    "env.disturbance_sigma": None,
    "env.dt": 0.01,
    "prism.alpha": 0.5,
    "prism.beta": 0.5,
    "prism.delta": 0.1,
    "prism.n0": 3,
    "prism.n_i": 3,
    "prism.k_iters": 10,
    "prism.n_val": 5,
    "prism.stride_coarse": 20,
    "prism.stride_fine": 2,
    "prism.t_max": 500,
    "prism.horizon": None,
    "prism.dr_axis": "none",
    "prism.dr_low": 1.0,
    "prism.dr_high": 1.0,
    "prism.fallback_lo": 0.35,
    "prism.fallback_hi": 0.65,
    "prism.warm_start": False,
    "prism.weighted_band": False,
    "train.learning_rate": 1e-3,
    "train.batch_size": 128,
    "train.epochs": 200,
    "train.momentum": 0.9,
    "train.hidden": [64, 64],
    "oracle.resolution": None,
    "oracle.m": None,
    "oracle.box": None,
    "baseline.num_traj": 0,  # 0 = match PRISM's final label count
    "baseline.stride": 0,  # 0 = coarse stride
    "sweep.alphas": [0.3, 0.4, 0.47, 0.5, 0.53, 0.6, 0.7],
    "strides.values": [60, 40, 20, 10],
    "strides.num_traj": 10,
    "dr.configs": [
        ["none", 1.0, 1.0],
        ["damping", 0.7, 1.3],
        ["gain", 0.7, 1.3],
        ["friction", 0.7, 1.3],
        ["damping", *WIDE_RANGES["damping"]],
        ["friction", 1.3, 2.0],
        ["friction", *WIDE_RANGES["friction"]],
        ["gain", *WIDE_RANGES["gain"]],
    ],
    "trace.index": 0,
    "trace.m": 16,
    "grid.dims": [0, 1],
    "grid.resolution": [200, 200],
    "grid.fixed": None,
}

ENV_DEFAULTS = {
    "braking": {"env.disturbance_sigma": 0.05, "oracle.resolution": [200, 200], "oracle.m": 16},
    "cartpole": {"env.disturbance_sigma": 0.02, "oracle.resolution": [10, 10, 10, 10], "oracle.m": 8},
}


class ConfigError(ValueError):
    pass


def flatten(tree: dict, prefix: str = "") -> dict:
    """``{"prism": {"beta": 0.5}}`` and ``{"prism.beta": 0.5}`` both become the latter."""
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_file(path: str | Path) -> dict:
    try:
        with Path(path).open("rb") as f:
            return flatten(tomli.load(f))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: malformed config: {e}") from None


def parse_value(text: str):
    """A flag value in TOML syntax; bare words fall back to strings."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _check_keys(values: dict, source: str) -> None:
    for k in values:
        if k not in DEFAULTS:
            raise ConfigError(f"unknown config key {k!r} in {source}")


def _coerce(key: str, value, default):
    """Loose type check against the default; ints are accepted where floats are expected."""
    ref = default if default is not None else ENV_DEFAULTS["braking"].get(key)
    if ref is None or value is None:
        return value
    if isinstance(ref, bool):
        ok = isinstance(value, bool)
    elif isinstance(ref, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(ref, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(ref, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(ref))
    if not ok:
        raise ConfigError(f"{key}: expected {type(ref).__name__}, got {value!r}")
    return value


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> dict:
    file_values = file_values or {}
    flag_values = flag_values or {}
    _check_keys(file_values, "config file")
    _check_keys(flag_values, "flags")
    name = flag_values.get("env.name", file_values.get("env.name", DEFAULTS["env.name"]))
    if name not in ENV_DEFAULTS:
        raise ConfigError(f"env.name: unknown env {name!r}")
    flat = {**DEFAULTS, **ENV_DEFAULTS[name], **file_values, **flag_values}
    return {k: _coerce(k, v, DEFAULTS[k]) for k, v in flat.items()}


@dataclass
class ExperimentConfig:
    experiment: str
    env: Env
    params: EnvParams
    prism: PrismConfig
    hyper: TrainHyper
    out: Path
    flat: dict  # the resolved key/value table, for snapshots and fingerprints

    @property
    def seeds(self) -> list[int]:
        return list(self.flat["seeds"])

    def get(self, key: str):
        return self.flat[key]


def _section(name: str, build):
    try:
        return build()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}] {e}") from None


def build(flat: dict) -> ExperimentConfig:
    """Validate every section before any work starts."""
    exp = flat["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    env = _section("env", lambda: make_env(flat["env.name"]))
    params = _section(
        "env",
        lambda: EnvParams(
            damping_scale=flat["env.damping_scale"],
            gain_scale=flat["env.gain_scale"],
            friction_scale=flat["env.friction_scale"],
            disturbance_sigma=flat["env.disturbance_sigma"],
            dt=flat["env.dt"],
        ),
    )
    prism = _section(
        "prism",
        lambda: PrismConfig(
            alpha=flat["prism.alpha"],
            beta=flat["prism.beta"],
            delta=flat["prism.delta"],
            n0=flat["prism.n0"],
            n_i=flat["prism.n_i"],
            k_iters=flat["prism.k_iters"],
            n_val=flat["prism.n_val"],
            strides=StrideConfig(flat["prism.stride_coarse"], flat["prism.stride_fine"]),
            t_max=flat["prism.t_max"],
            horizon=flat["prism.horizon"],
            dr=DrConfig(flat["prism.dr_axis"], flat["prism.dr_low"], flat["prism.dr_high"]),
            fallback_band=(flat["prism.fallback_lo"], flat["prism.fallback_hi"]),
            warm_start=flat["prism.warm_start"],
            weighted_band=flat["prism.weighted_band"],
            seed=flat["seed"],
        ),
    )
    hyper = _section(
        "train",
        lambda: TrainHyper(
            learning_rate=flat["train.learning_rate"],
            batch_size=flat["train.batch_size"],
            epochs=flat["train.epochs"],
            momentum=flat["train.momentum"],
            hidden=tuple(flat["train.hidden"]),
        ),
    )
    if len(flat["oracle.resolution"]) != env.dimension:
        raise ConfigError(f"oracle.resolution: need {env.dimension} entries for env {env.name!r}")
    if flat["oracle.m"] < 1:
        raise ConfigError("oracle.m: must be >= 1")
    if any(not 0 < a <= 1 for a in flat["sweep.alphas"]):
        raise ConfigError("sweep.alphas: every alpha must lie in (0, 1]")
    if any(s < 1 for s in flat["strides.values"]):
        raise ConfigError("strides.values: strides must be >= 1")
    for entry in flat["dr.configs"]:
        _section("dr", lambda: DrConfig(*entry))
    if len(flat["grid.dims"]) != 2 or len(set(flat["grid.dims"])) != 2 or not all(0 <= d < env.dimension for d in flat["grid.dims"]):
        raise ConfigError("grid.dims: need two distinct coordinate indices")
    if flat["grid.fixed"] is not None and len(flat["grid.fixed"]) != env.dimension:
        raise ConfigError(f"grid.fixed: need {env.dimension} entries")
    if not flat["seeds"]:
        raise ConfigError("seeds: need at least one seed")
    out = Path(flat["out"] or Path("out") / exp)
    return ExperimentConfig(exp, env, params, prism, hyper, out, flat)


def parse_config(path: str | Path | None = None, flags: dict | None = None) -> ExperimentConfig:
    return build(resolve(load_file(path) if path else {}, flags))


def dump_toml(flat: dict) -> str:
    """Flat ``key = value`` lines that ``load_file`` reads back; unset keys are omitted."""
    lines = []
    for k in sorted(flat):
        v = flat[k]
        if v is None:
            continue
        lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"
