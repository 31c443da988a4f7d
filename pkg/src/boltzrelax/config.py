"""Configuration loading from TOML files with pydantic validation."""

from __future__ import annotations

import os
import tomllib
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

DATA_DIR_ENV = "BOLTZRELAX_DATA_DIR"
SEED_ENV = "BOLTZRELAX_SEED"


class SyntheticConfig(BaseModel):
    modes: int = Field(default=4, ge=1)
    dim: int = Field(default=64, ge=1)
    noise: float = Field(default=0.05, ge=0.0, le=1.0)
    n: int = Field(default=2000, ge=0)
    n_test: int = Field(default=500, ge=0)


class DataConfig(BaseModel):
    dataset: Literal["synthetic", "mnist"] = "synthetic"
    data_dir: str = "data"
    binarize_seed: int = 0
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)


class PriorConfig(BaseModel):
    kind: Literal["overlapping", "git"] = "overlapping"
    D1: int = Field(default=8, ge=1)
    D2: int = Field(default=8, ge=1)
    mf_iterations: int = Field(default=5, ge=1)
    git_beta: float = Field(default=30.0, gt=0.0)

    @property
    def D(self) -> int:
        return self.D1 + self.D2


class SmoothingConfig(BaseModel):
    kind: Literal["exp", "unexp", "power", "gauss", "git"] = "power"
    beta: float = Field(default=30.0, gt=0.0)
    epsilon: float = 0.05

    @model_validator(mode="after")
    def _check_family(self) -> SmoothingConfig:
        if self.kind == "power" and self.beta <= 1.0:
            raise ValueError("power-function smoothing needs beta > 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        return self


class NetworkConfig(BaseModel):
    arch: Literal["linear", "mlp"] = "linear"
    hidden: int = Field(default=200, ge=1)
    layers: int = Field(default=2, ge=1)


class PosteriorConfig(NetworkConfig):
    groups: int = Field(default=2, ge=1)


class SamplerConfig(BaseModel):
    """Negative-phase sampler. ``chains`` is the PCD chain count or the PA population."""

    kind: Literal["pcd", "pa"] = "pa"
    chains: int = Field(default=1000, ge=1)
    sweeps_per_update: int = Field(default=40, ge=1)
    pa_temperatures: int = Field(default=40, ge=1)

    @field_validator("kind", mode="before")
    @classmethod
    def _lower(cls, value: Any) -> Any:
        return value.lower() if isinstance(value, str) else value

    @model_validator(mode="after")
    def _check_population(self) -> SamplerConfig:
        if self.kind == "pa" and self.chains < 2:
            raise ValueError("population annealing needs a population of at least 2")
        return self


class AisConfig(BaseModel):
    num_temperatures: int = Field(default=10_000, ge=2)
    num_samples: int = Field(default=1000, ge=1)
    schedule: list[float] | None = None

    @model_validator(mode="after")
    def _check_schedule(self) -> AisConfig:
        if self.schedule is None:
            return self
        grid = np.asarray(self.schedule, dtype=np.float64)
        if grid.size < 2 or grid[0] != 0.0 or grid[-1] != 1.0:
            raise ValueError("AIS schedule must start at 0 and end at 1")
        if np.any(np.diff(grid) <= 0.0):
            raise ValueError("AIS schedule must be strictly increasing")
        self.num_temperatures = int(grid.size)
        return self

    def grid(self) -> np.ndarray:
        if self.schedule is not None:
            return np.asarray(self.schedule, dtype=np.float64)
        return np.linspace(0.0, 1.0, self.num_temperatures)


class TrainConfig(BaseModel):
    epochs: int = Field(default=10, ge=0)
    max_updates: int | None = Field(default=None, ge=0)
    batch_size: int = Field(default=100, ge=1)
    k: int = Field(default=5, ge=1)
    lr: float = Field(default=1e-3, ge=0.0)
    warmup_fraction: float = Field(default=0.3, ge=0.0, le=1.0)
    eval_k: int = Field(default=4000, ge=1)
    log_every: int = Field(default=10, ge=1)
    ais_every: int = Field(default=0, ge=0)
    checkpoint_every: int = Field(default=0, ge=0)
    output_dir: str = "runs"
    seed: int | None = None


class AppConfig(BaseModel):
    data: DataConfig = Field(default_factory=DataConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    smoothing: SmoothingConfig = Field(default_factory=SmoothingConfig)
    posterior: PosteriorConfig = Field(default_factory=PosteriorConfig)
    decoder: NetworkConfig = Field(default_factory=NetworkConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    ais: AisConfig = Field(default_factory=AisConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def _check_compatibility(self) -> AppConfig:
        if self.prior.D % self.posterior.groups:
            raise ValueError(
                f"posterior groups ({self.posterior.groups}) must divide D ({self.prior.D})"
            )
        if (self.prior.kind == "git") != (self.smoothing.kind == "git"):
            raise ValueError("the git prior and git (shifted Gaussian) smoothing must be used together")
        return self


def load_config(path: str | Path | None = None) -> AppConfig:
    """Load configuration from a TOML file, merging with defaults."""
    if path is None:
        candidates = [Path("config.toml"), Path(__file__).parent.parent.parent / "config.toml"]
        for candidate in candidates:
            if candidate.exists():
                path = candidate
                break

    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if p.exists():
            with open(p, "rb") as f:
                data = tomllib.load(f)

    config = AppConfig.model_validate(data)

    data_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir:
        config.data.data_dir = data_dir
    if config.train.seed is None and os.environ.get(SEED_ENV):
        config.train.seed = int(os.environ[SEED_ENV])

    return config


def with_overrides(config: AppConfig, overrides: dict[str, Any]) -> AppConfig:
    """Re-validate ``config`` with dotted-key overrides such as ``{"train.k": 25}``.

    ``None`` values are ignored so unset CLI flags leave the file values alone.
    """
    data = config.model_dump()
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node[key]
        node[leaf] = value
    return AppConfig.model_validate(data)
