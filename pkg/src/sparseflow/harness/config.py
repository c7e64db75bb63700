"""Experiment configuration: one JSON document, unknown keys rejected."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from ..roadmap import build_graph_map, build_grid_map
from ..strec import ConfigError as ModelConfigError
from ..strec import ModelConfig, TrainOptions, default_config

CONFIG_VERSION = 1
OUT_ENV = "SPARSEFLOW_OUT"


class ConfigError(ValueError):
    """Config validation failure; the message names the offending field."""


DEFAULTS: dict = {
    "version": CONFIG_VERSION,
    "variants": ["grid", "graph"],
    "world": {
        "grid": {"H": 32, "W": 32, "cell_size": 0.25},
        "graph": {"rows": 16, "cols": 17, "block_km": 0.4},
        "T": 360,
        "days": 6,
        "events_per_day": 3,
        "noise_sigma": 2.0,
        "obs_sigma": 8.0,
        "n_vehicles": 2000,
        "seed": 0,
        "start": "07:30",
        "step_minutes": 1.0,
    },
    "sparsity": [0.02, 0.05, 0.10, 0.20],
    "seeds": [0, 1, 2, 3, 4],
    "window": 1,
    "model": {"grid": {}, "graph": {}},
    "training": {
        "epochs": 8,
        "batch": 16,
        "lr": 1e-3,
        "steps_per_epoch": 60,
        "seed": 0,
        "val_windows": 256,
    },
    "output_dir": "runs/desk",
}

MODEL_KEYS = {"temporal", "L", "C1", "C2", "d_s", "d_h", "d_z", "beta", "v_scale", "v_max"}


# Free-form blocks: their keys are checked against MODEL_KEYS instead of DEFAULTS.
FREE_BLOCKS = {"model.grid", "model.graph"}


def _merge(base: dict, over: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[k], dict) and where not in FREE_BLOCKS:
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected an object")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def _need(cond: bool, field: str, msg: str):
    if not cond:
        raise ConfigError(f"{field}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass
class ExperimentConfig:
    raw: dict

    @property
    def world(self) -> dict:
        return self.raw["world"]

    @property
    def variants(self) -> list[str]:
        return list(self.raw["variants"])

    @property
    def sparsity(self) -> list[float]:
        return [float(p) for p in self.raw["sparsity"]]

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def window(self) -> int:
        return int(self.raw["window"])

    @property
    def days(self) -> int:
        return int(self.world["days"])

    @property
    def T(self) -> int:
        return int(self.world["T"])

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def canonical(self) -> str:
        """Config without the output location; this is what manifests fingerprint."""
        d = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def road_map(self, variant: str):
        w = self.world
        if variant == "grid":
            g = w["grid"]
            return build_grid_map(g["H"], g["W"], g["cell_size"])
        g = w["graph"]
        return build_graph_map(g["rows"], g["cols"], g["block_km"])

    def model_config(self, variant: str) -> ModelConfig:
        over = dict(self.raw["model"].get(variant, {}))
        temporal = over.pop("temporal", "gru")
        try:
            return default_config(self.road_map(variant), temporal, **over)
        except ModelConfigError as exc:
            raise ConfigError(f"model.{variant}.{exc}") from None

    def train_options(self) -> TrainOptions:
        t = self.raw["training"]
        return TrainOptions(epochs=t["epochs"], batch=t["batch"], lr=t["lr"],
                            steps_per_epoch=t["steps_per_epoch"], seed=t["seed"])

    def split(self) -> dict[str, list[int]]:
        """Last day held out for testing, the one before for validation, the rest for training."""
        d = self.days
        if d < 2:
            return {"train": list(range(d)), "val": [], "test": []}
        test = [d - 1]
        val = [d - 2] if d >= 3 else []
        train = list(range(d - 1 - len(val)))
        return {"train": train, "val": val, "test": test}

    def restricted(self, variant: str | None = None, seed: int | None = None) -> "ExperimentConfig":
        """Copy limited to one variant and/or one sweep seed (CLI filters)."""
        raw = copy.deepcopy(self.raw)
        if variant is not None:
            if variant not in raw["variants"]:
                raise ConfigError(f"variants: {variant!r} is not enabled in this config")
            raw["variants"] = [variant]
        if seed is not None:
            raw["seeds"] = [int(seed)]
        return validate(raw)


def validate(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    _need("version" in raw, "version", "missing")
    _need(raw["version"] == CONFIG_VERSION, "version", f"unsupported version {raw['version']!r}")
    cfg = _merge(DEFAULTS, raw, "")
    w = cfg["world"]
    _need(isinstance(cfg["variants"], list) and len(cfg["variants"]) > 0, "variants", "need at least one")
    for v in cfg["variants"]:
        _need(v in ("grid", "graph"), "variants", f"unknown variant {v!r}")
    _need(len(set(cfg["variants"])) == len(cfg["variants"]), "variants", "duplicates")
    for key in ("H", "W"):
        _need(_is_int(w["grid"][key]) and w["grid"][key] >= 4, f"world.grid.{key}", "must be an integer >= 4")
    _need(_is_num(w["grid"]["cell_size"]) and w["grid"]["cell_size"] > 0, "world.grid.cell_size", "must be > 0")
    for key in ("rows", "cols"):
        _need(_is_int(w["graph"][key]) and w["graph"][key] >= 2, f"world.graph.{key}", "must be an integer >= 2")
    _need(_is_num(w["graph"]["block_km"]) and w["graph"]["block_km"] > 0, "world.graph.block_km", "must be > 0")
    _need(_is_int(w["T"]) and w["T"] >= 1, "world.T", "must be an integer >= 1")
    _need(_is_int(w["days"]) and w["days"] >= 1, "world.days", "must be an integer >= 1")
    _need(_is_int(w["events_per_day"]) and w["events_per_day"] >= 0, "world.events_per_day", "must be >= 0")
    for key in ("noise_sigma", "obs_sigma"):
        _need(_is_num(w[key]) and w[key] >= 0, f"world.{key}", "must be >= 0")
    _need(_is_int(w["n_vehicles"]) and w["n_vehicles"] >= 1, "world.n_vehicles", "must be an integer >= 1")
    _need(_is_int(w["seed"]), "world.seed", "must be an integer")
    _need(_is_num(w["step_minutes"]) and w["step_minutes"] > 0, "world.step_minutes", "must be > 0")
    _need(isinstance(w["start"], str) and len(w["start"].split(":")) == 2, "world.start", "expected HH:MM")
    ps = cfg["sparsity"]
    _need(isinstance(ps, list) and len(ps) > 0, "sparsity", "need at least one level")
    for p in ps:
        _need(_is_num(p) and 0 < p <= 1, "sparsity", f"every p must be in (0, 1], got {p!r}")
    _need(len(set(ps)) == len(ps), "sparsity", "duplicate levels")
    seeds = cfg["seeds"]
    _need(isinstance(seeds, list) and len(seeds) > 0, "seeds", "need at least one seed")
    _need(all(_is_int(s) and s >= 0 for s in seeds), "seeds", "seeds must be non-negative integers")
    _need(len(set(seeds)) == len(seeds), "seeds", "duplicate seeds")
    _need(_is_int(cfg["window"]) and cfg["window"] >= 1, "window", "must be an integer >= 1")
    for v in ("grid", "graph"):
        over = cfg["model"][v]
        _need(isinstance(over, dict), f"model.{v}", "expected an object")
        for k in over:
            _need(k in MODEL_KEYS, f"model.{v}.{k}", "unknown key")
    t = cfg["training"]
    _need(_is_int(t["epochs"]) and t["epochs"] >= 0, "training.epochs", "must be an integer >= 0")
    _need(_is_int(t["batch"]) and t["batch"] >= 1, "training.batch", "must be an integer >= 1")
    _need(_is_num(t["lr"]) and t["lr"] > 0, "training.lr", "must be > 0")
    _need(t["steps_per_epoch"] is None or (_is_int(t["steps_per_epoch"]) and t["steps_per_epoch"] >= 1),
          "training.steps_per_epoch", "must be null or an integer >= 1")
    _need(_is_int(t["seed"]), "training.seed", "must be an integer")
    _need(_is_int(t["val_windows"]) and t["val_windows"] >= 1, "training.val_windows", "must be an integer >= 1")
    _need(isinstance(cfg["output_dir"], str) and cfg["output_dir"], "output_dir", "must be a non-empty string")
    out = ExperimentConfig(cfg)
    for v in out.variants:
        out.model_config(v)
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return validate(raw)


def resolve_out(cfg: ExperimentConfig | None, out: str | None = None) -> Path:
    """--out flag, then the SPARSEFLOW_OUT environment variable, then the config's output_dir."""
    if out:
        return Path(out)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env)
    if cfg is None:
        raise ConfigError("output_dir: no --out given and no config to read it from")
    return Path(cfg.raw["output_dir"])
