"""Experiment configuration: a flat, declarative record mirrored by YAML/JSON files."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..cache import config_hash
from ..features import FeatureSpec
from ..readout import DEFAULT_LAMBDA_GRID
from ..reservoir import MODES, N_COLUMNS, check_aggregate


DATA_ENV = "PHOTONIC_RC_DATA"


class ConfigError(ValueError):
    pass


def default_data_dir() -> Path:
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "photonic_rc" / "mnist"


@dataclass
class ExperimentConfig:
    mode: str = "feedforward"
    features: FeatureSpec = field(default_factory=FeatureSpec)
    n: int = 1024
    rho: float = 0.9
    density: float = 0.05
    input_gain: float = 0.03
    mask_gain: float = 1.0
    k_e: int = 0
    aggregate: tuple[int, ...] = (14, 16, 20, 24)
    vote_last: int = 7
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    seeds: tuple[int, ...] = (0, 1, 2)
    split_seed: int = 0
    validation_size: int = 10_000
    train_size: int | None = None
    bias: bool = True
    refit: bool = True
    block_size: int = 2048
    memory_budget_gb: float | None = None
    data_dir: str | None = None
    cache_dir: str | None = None
    cache_states: bool = False
    label: str = ""

    def __post_init__(self):
        if isinstance(self.features, Mapping):
            self.features = FeatureSpec(self.features.get("method", "raw"),
                                        self.features.get("params", {}))
        elif isinstance(self.features, str):
            self.features = FeatureSpec(self.features)
        self.aggregate = tuple(int(a) for a in self.aggregate)
        self.lambda_grid = tuple(float(g) for g in self.lambda_grid)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.rho < 0:
            raise ConfigError(f"rho must be non-negative, got {self.rho}")
        if not 0 < self.density <= 1:
            raise ConfigError(f"density must lie in (0, 1], got {self.density}")
        if self.k_e < 0:
            raise ConfigError(f"k_e must be non-negative, got {self.k_e}")
        if self.mode == "columnwise_aggregate":
            try:
                check_aggregate(self.aggregate)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if not 1 <= self.vote_last <= N_COLUMNS:
            raise ConfigError(f"vote_last must lie in [1, {N_COLUMNS}], got {self.vote_last}")
        if not self.lambda_grid:
            raise ConfigError("lambda grid is empty")
        if any(g < 0 for g in self.lambda_grid):
            raise ConfigError(f"lambda grid has negative entries: {self.lambda_grid}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.validation_size < 0:
            raise ConfigError("validation_size must be non-negative")
        if self.validation_size == 0 and len(set(self.lambda_grid)) > 1:
            raise ConfigError("selecting lambda needs a validation split (validation_size > 0)")
        if self.train_size is not None and self.train_size < 1:
            raise ConfigError("train_size must be positive")

    # -- derived quantities -------------------------------------------------

    @property
    def columnwise(self) -> bool:
        return self.mode.startswith("columnwise")

    @property
    def effective_rho(self) -> float:
        """Spectral radius actually used: feedforward mode runs with ``W_res = 0``."""
        return 0.0 if self.mode == "feedforward" else self.rho

    @property
    def input_dim(self) -> int:
        return N_COLUMNS if self.columnwise else self.features.dimension()

    @property
    def readout_dim(self) -> int:
        """Rows of one training column of the state matrix (bias excluded)."""
        if self.mode == "recurrent_full":
            return (self.k_e + 1) * self.n
        if self.mode == "columnwise_aggregate":
            return len(self.aggregate) * self.n
        return self.n

    # -- (de)serialization --------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, FeatureSpec):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**dict(d))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        return cls.from_dict(data or {})

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        """Copy with ``field`` or ``features.<param>`` / ``features.method`` replaced."""
        d = self.to_dict()
        for key, value in overrides.items():
            if key.startswith("features."):
                sub = key.split(".", 1)[1]
                feats = dict(d["features"])
                if sub == "method":
                    feats = {"method": value, "params": {}}
                else:
                    feats["params"] = {**feats.get("params", {}), sub: value}
                d["features"] = feats
            elif key in d:
                d[key] = value
            else:
                raise ConfigError(f"unknown config field or sweep axis {key!r}")
        return ExperimentConfig.from_dict(d)

    def reservoir_key(self, seed: int) -> str:
        """Hash of everything that determines harvested states for one seed."""
        d = self.to_dict()
        keep = ["mode", "n", "density", "input_gain", "mask_gain", "split_seed",
                "validation_size", "train_size"]
        if self.mode == "recurrent_full":
            keep.append("k_e")
        if self.mode == "columnwise_aggregate":
            keep.append("aggregate")
        if self.mode == "columnwise_per_column":
            keep.append("vote_last")
        if not self.columnwise:
            keep.append("features")
        return config_hash({**{k: d[k] for k in keep}, "rho": self.effective_rho, "seed": seed})
