"""Run configuration: defaults, named presets, JSON files, environment and flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .actionloss import LossWeights
from .forcebasis import LIBRARY_PRESETS
from .metrics import ValidationConfig
from .orbitgen import GeneratorConfig
from .trainer import Schedule, TrainConfig

SEED_ENV = "MINACTION_SEED"


@dataclass(frozen=True)
class SindyConfig:
    stride: int = 10
    threshold: float = 0.05
    n_boot: int = 0


@dataclass(frozen=True)
class NoiseTableConfig:
    sigma_pos: float = 0.016
    dt: float = 0.05
    strides: tuple = (1, 5, 10, 20)
    n_samples: int = 100_000
    signal: float = 0.25


@dataclass(frozen=True)
class RunConfig:
    preset: str = "kepler-default"
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    sindy: SindyConfig = field(default_factory=SindyConfig)
    noise_table: NoiseTableConfig = field(default_factory=NoiseTableConfig)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def to_json(self) -> dict:
        return _to_plain(self)


def _library_override(name: str) -> dict:
    return {"train": {"library": list(LIBRARY_PRESETS[name])}}


PRESETS: dict[str, dict] = {
    "kepler-default": {"generator": {"system": "kepler"}},
    "hooke-default": {"generator": {"system": "hooke"}},
    "biased-init": {"train": {"logit_bias": [1.5, 0.0, 0.0, 0.0, 0.0]}},
    # energy and sparsity terms off; temperature held at its start value
    "ablation-tf": {"train": {"schedule": {"alpha_E_start": 0.0, "alpha_E_end": 0.0,
                                           "tau_end": 1.0}}},
    "slow-anneal": {"train": {"schedule": {"total_epochs": 300, "tau_end": 0.001}}},
    "extended-warmup": {"train": {"schedule": {"warmup_epochs": 100, "total_epochs": 250}}},
    "low-noise": {"generator": {"noise_fraction": 0.005}},
    "library-confounders": _library_override("confounders"),
    "library-expanded": _library_override("expanded"),
    "library-missing": _library_override("missing"),
}


class ConfigKeyError(ValueError):
    pass


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(current, value):
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if current is None and isinstance(value, list):
        return tuple(value)
    return value


def merge(obj, overrides: dict, path: str = ""):
    """Apply a nested override dict to a frozen dataclass; unknown keys raise."""
    if not isinstance(overrides, dict):
        raise ConfigKeyError(f"expected an object at {path or 'top level'}")
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigKeyError(f"unknown config key {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            changes[key] = merge(current, value, where)
        else:
            changes[key] = _coerce(current, value)
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigKeyError(f"invalid value under {path or 'top level'}: {exc}") from exc


def load_run_config(preset: str | None = None, document: dict | None = None,
                    environ=None, seed: int | None = None,
                    overrides: dict | None = None) -> RunConfig:
    """Resolve a RunConfig; later sources win: defaults, preset, file, environment, flags.

    ``document`` may be a bare RunConfig object or any output that embeds one
    under ``run_config``.
    """
    if document is not None and "run_config" in document:
        document = document["run_config"]
    document = dict(document or {})
    name = preset or document.get("preset") or "kepler-default"
    if name not in PRESETS:
        raise ConfigKeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = merge(RunConfig(), PRESETS[name])
    cfg = merge(cfg, document)
    cfg = dataclasses.replace(cfg, preset=name)
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV, "").strip():
        try:
            cfg = dataclasses.replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError as exc:
            raise ConfigKeyError(f"{SEED_ENV} must be an integer") from exc
    if overrides:
        cfg = merge(cfg, overrides)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    # the master seed is authoritative for training
    cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=cfg.seed))
    cfg.generator.validate()
    return cfg


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive), ``"1,4,7"`` or a mix like ``"0..2,5"``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = (int(v) for v in part.split("..", 1))
            if hi < lo:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


__all__ = ["RunConfig", "SindyConfig", "NoiseTableConfig", "PRESETS", "load_run_config",
           "merge", "parse_seeds", "ConfigKeyError", "Schedule", "LossWeights"]
