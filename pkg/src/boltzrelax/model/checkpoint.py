"""Model checkpoints: every ModelState field plus the training generator state."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from boltzrelax.config import AppConfig
from boltzrelax.core.rng import dump_state, load_state, make_rng
from boltzrelax.core.samplers import PersistentChains
from boltzrelax.errors import CheckpointError
from boltzrelax.model.vae import ModelState, build_model
from boltzrelax.storage import read_container, require, write_container

logger = logging.getLogger(__name__)

MODEL_FORMAT = "boltzrelax-model"
MODEL_VERSION = 1


def save_checkpoint(path: str | Path, state: ModelState, rng: np.random.Generator | None = None) -> Path:
    fields: dict[str, object] = {
        "config": json.dumps(state.config.model_dump()),
        "data_dim": state.data_dim,
        "updates": state.updates,
        "warmup_updates": state.warmup_updates,
        "adam.t": state.optimizer.t,
    }
    for name, value in state.parameters().items():
        fields[f"param.{name}"] = value
        if name in state.optimizer.m:
            fields[f"adam.m.{name}"] = state.optimizer.m[name]
            fields[f"adam.v.{name}"] = state.optimizer.v[name]
    if state.chains is not None:
        fields["chains"] = state.chains.state
    if state.log_z_snapshot is not None:
        fields["log_z_snapshot"] = state.log_z_snapshot
    if rng is not None:
        fields["rng_state"] = dump_state(rng)
    path = write_container(path, MODEL_FORMAT, MODEL_VERSION, fields)
    logger.info("Checkpoint written to %s (update %d)", path, state.updates)
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelState, np.random.Generator | None]:
    """Rebuild the model described by the stored config and restore every array in place."""
    data = read_container(path, MODEL_FORMAT, MODEL_VERSION)
    require(data, "config", "data_dim", "updates", "warmup_updates", "adam.t")
    config = AppConfig.model_validate(json.loads(str(data["config"])))
    # initial values are overwritten below; the generator only fixes shapes
    state = build_model(config, int(data["data_dim"]), make_rng(0))
    for name, param in state.parameters().items():
        key = f"param.{name}"
        if key not in data:
            raise CheckpointError(f"checkpoint has no parameter {name!r}")
        if data[key].shape != param.shape:
            raise CheckpointError(f"parameter {name!r} has shape {data[key].shape}, expected {param.shape}")
        param[...] = data[key]
        if f"adam.m.{name}" in data:
            state.optimizer.m[name] = data[f"adam.m.{name}"].copy()
            state.optimizer.v[name] = data[f"adam.v.{name}"].copy()
    state.optimizer.t = int(data["adam.t"])
    state.updates = int(data["updates"])
    state.warmup_updates = int(data["warmup_updates"])
    if "chains" in data:
        state.chains = PersistentChains(data["chains"].copy())
    if "log_z_snapshot" in data:
        state.log_z_snapshot = float(data["log_z_snapshot"])
    rng = load_state(str(data["rng_state"])) if "rng_state" in data else None
    return state, rng
