"""Flat JSON run configuration.

Every key is optional; omitted keys take the defaults below. Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .evaluation import RetrainConfig
from .relaxation import TemperatureSchedule
from .search_space import SearchSpaceConfig
from .supernet import SupernetConfig
from .trainer import TrainerConfig

DEFAULTS = {
    # search space
    "n_nodes": 5,
    "op_set": "standard",
    "include_zero": None,  # None: true, or false in dst mode
    "ops": None,
    # super-net
    "n_cells": 8,
    "init_channels": 8,
    "bottleneck_ratio": 1,
    "engine_placement": "first",
    "mode": "entran",
    "feature_sharing": True,
    "transit_coefficient": "unit",
    # search
    "lambda": 0.1,
    "epochs": 30,
    "batch_size": 8,
    "w_lr": 0.02,
    "w_momentum": 0.9,
    "w_weight_decay": 3e-4,
    "arch_lr": 3e-2,
    "arch_betas": [0.5, 0.999],
    "arch_weight_decay": 1e-3,
    "grad_clip": 5.0,
    "seed": 0,
    "arch_warmup": 0,
    "tau_initial": 5.0,
    "tau_decay": 0.923,
    # retraining
    "retrain_epochs": 20,
    "retrain_n_cells": 5,
    "retrain_init_channels": 8,
    "retrain_lr": 0.02,
    # io
    "dataset": "synthetic:4,1,8,8,32,0",
    "eval_dataset": None,
    "out_dir": "runs/search",
}

SEED_ENV = "ENTRAN_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    space: SearchSpaceConfig
    supernet: SupernetConfig
    trainer: TrainerConfig
    retrain: RetrainConfig
    dataset: str
    eval_dataset: str | None
    out_dir: str
    raw: dict

    def to_json(self) -> dict:
        return dict(self.raw)

    def with_values(self, **overrides) -> RunConfig:
        return build_config({**self.raw, **overrides}, env=False)


def build_config(values: dict, env: bool = True) -> RunConfig:
    if not isinstance(values, dict):
        raise ConfigError(f"config must be a JSON object, got {type(values).__name__}")
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    v = {**DEFAULTS, **values}
    if env and os.environ.get(SEED_ENV):
        try:
            v["seed"] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={os.environ[SEED_ENV]!r} is not an integer") from None
    if v["include_zero"] is None:
        v["include_zero"] = v["mode"] != "dst"
    elif v["mode"] == "dst" and v["include_zero"]:
        raise ConfigError("mode = 'dst' conflicts with include_zero = true (dst searches without the zero op)")
    try:
        space = SearchSpaceConfig(v["n_nodes"], v["op_set"], v["include_zero"], v["ops"])
        supernet = SupernetConfig(v["n_cells"], v["init_channels"], v["bottleneck_ratio"], v["engine_placement"],
                                  v["mode"], v["feature_sharing"], v["transit_coefficient"])
        trainer = TrainerConfig(
            lam=v["lambda"], epochs=v["epochs"], batch_size=v["batch_size"], w_lr=v["w_lr"],
            w_momentum=v["w_momentum"], w_weight_decay=v["w_weight_decay"], arch_lr=v["arch_lr"],
            arch_betas=tuple(v["arch_betas"]), arch_weight_decay=v["arch_weight_decay"],
            grad_clip=v["grad_clip"], seed=v["seed"], arch_warmup=v["arch_warmup"],
            temperature=TemperatureSchedule(v["tau_initial"], v["tau_decay"]))
        retrain = RetrainConfig(n_cells=v["retrain_n_cells"], init_channels=v["retrain_init_channels"],
                                epochs=v["retrain_epochs"], batch_size=v["batch_size"], lr=v["retrain_lr"],
                                momentum=v["w_momentum"], weight_decay=v["w_weight_decay"],
                                grad_clip=v["grad_clip"], seed=v["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(space, supernet, trainer, retrain, v["dataset"], v["eval_dataset"], v["out_dir"], v)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return build_config(values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(), str(path))
