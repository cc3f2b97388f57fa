"""Flat run configuration: defaults < config file < command-line overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Mapping

from .fileio import format_float, read_kv, write_kv


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # dataset
    seed: int = 42
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    test_ratio: float = 0.2
    stratify: bool = True
    # features
    k: int = 32
    n_trees: int = 100
    max_features: int = 0  # 0 = ceil(sqrt(d))
    min_samples_split: int = 2
    clip: bool = True
    # model / training
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    dropout: float = 0.5
    # evaluation / inference
    threshold: float = 0.5
    threads: int = 0  # 0 = all cores

    def with_overrides(self, items: Mapping[str, str]) -> "RunConfig":
        return dataclasses.replace(self, **_coerce(items))

    def save(self, path: str | os.PathLike) -> None:
        items = {}
        for f in fields(self):
            v = getattr(self, f.name)
            items[f.name] = format_float(v) if isinstance(v, float) else v
        write_kv(path, items, comment="effective run configuration")

    @classmethod
    def load(cls, path: str | os.PathLike | None = None, overrides: Mapping[str, str] | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            cfg = cfg.with_overrides(read_kv(path))
        if overrides:
            cfg = cfg.with_overrides(overrides)
        return cfg

    def effective_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(items: Mapping[str, str]) -> dict:
    out = {}
    for key, raw in items.items():
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        typ = _TYPES[key]
        text = str(raw).strip()
        try:
            if typ == "bool":
                low = text.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(text)
                out[key] = low in ("true", "1", "yes")
            elif typ == "int":
                out[key] = int(text)
            else:
                out[key] = float(text)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {typ}") from None
    return out
