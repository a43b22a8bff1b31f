"""Flat ``key = value`` experiment configs.

Lines starting with ``#`` are comments.  Relative data paths resolve against
``data_dir``, which defaults to ``$IDS4NR_DATA_DIR/<dataset>``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .backbones import BackboneConfig
from .errors import ConfigError, MissingFile
from .trainer import TrainConfig

DATA_ENV = "IDS4NR_DATA_DIR"
SWEEPABLE = ("gamma", "dim", "seed", "lr", "epochs", "lam", "negatives", "ablation", "backbone",
             "fusion")


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats_or_words(text):
    return tuple(t for t in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text.strip().lower() in ("", "none", "default") else int(text)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "ml-100k"
    data_dir: str | None = None
    interactions: str = "interactions.tsv"
    user_attrs: str | None = "user_attrs.tsv"
    item_attrs: str | None = "item_attrs.tsv"
    format: str = "tsv"
    k_core: int = 5
    cold_fraction: float = 0.2
    holdout: float = 0.1
    split_seed: int | None = None  # None: follow ``seed``
    backbone: str = "cml"
    dim: int = 50
    batch_size: int = 128
    lr: float = 0.001
    epochs: int | None = None
    gamma: float = 0.01
    lam: float = 1e-5
    negatives: int = 4
    seed: int = 0
    ablation: str = "full"
    fusion: str = "mean"
    ncf_tower_dims: tuple[int, ...] | None = None
    cml_margin: float = 1.0
    eval_ns: tuple[int, ...] = (5, 10)
    out: str = "runs/default"
    sweep_param: str | None = None
    sweep_values: tuple[str, ...] = field(default_factory=tuple)
    deterministic: bool = False

    def __post_init__(self):
        if self.sweep_param is not None and self.sweep_param not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {self.sweep_param!r}; choose from {SWEEPABLE}")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def effective_split_seed(self):
        return self.seed if self.split_seed is None else self.split_seed

    def root(self):
        if self.data_dir:
            return Path(self.data_dir)
        base = os.environ.get(DATA_ENV)
        return Path(base) / self.dataset if base else Path("data") / self.dataset

    def path(self, name):
        value = getattr(self, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.root() / p

    def check_paths(self):
        for name in ("interactions", "user_attrs", "item_attrs"):
            p = self.path(name)
            if p is not None and not p.is_file():
                raise MissingFile(p)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            backbone=BackboneConfig(self.backbone, self.ncf_tower_dims, self.cml_margin),
            dim=self.dim, batch_size=self.batch_size, lr=self.lr, epochs=self.epochs,
            gamma=self.gamma, lam=self.lam, negatives=self.negatives, seed=self.seed,
            ablation=self.ablation, fusion=self.fusion)

    def override(self, **values):
        """Copy with non-None ``values`` applied (strings are parsed)."""
        changes = {}
        for k, v in values.items():
            if v is None:
                continue
            changes[k] = _parse_value(k, v) if isinstance(v, str) else v
        return replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "k_core": int, "dim": int, "batch_size": int, "negatives": int, "seed": int,
    "cold_fraction": float, "holdout": float, "lr": float, "gamma": float, "lam": float,
    "cml_margin": float, "split_seed": _opt_int, "epochs": _opt_int,
    "ncf_tower_dims": lambda t: _ints(t) or None, "eval_ns": _ints,
    "sweep_values": _floats_or_words, "deterministic": _bool,
}
_NULLABLE = ("data_dir", "user_attrs", "item_attrs", "sweep_param")


def _parse_value(key, text):
    names = {f.name for f in fields(ExperimentConfig)}
    if key not in names:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    if key in _NULLABLE and text.lower() in ("", "none"):
        return None
    try:
        return _PARSERS.get(key, str)(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config(text, source="<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key = key.strip()
        values[key] = _parse_value(key, val)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))
