"""Training loop: minibatch IW updates, periodic AIS snapshots, checkpoints and a CSV metrics log."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from boltzrelax.config import AppConfig
from boltzrelax.core.rng import make_rng
from boltzrelax.core.samplers import ais_log_partition
from boltzrelax.model.checkpoint import load_checkpoint, save_checkpoint
from boltzrelax.model.vae import ModelState, build_model, iw_gradient_step

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["update", "bound", "logZ_snapshot", "grad_norm", "mf_kl_median", "wall_time"]
CHECKPOINT_NAME = "checkpoint.npz"
METRICS_NAME = "metrics.csv"

# generator stream keys under the run seed
_INIT_STREAM = 0
_ORDER_STREAM = 1
_STEP_STREAM = 2
_AIS_STREAM = 3


@dataclass
class TrainResult:
    state: ModelState
    checkpoint: Path
    metrics: Path
    log_z: float | None


def require_seed(config: AppConfig) -> int:
    if config.train.seed is None:
        raise ValueError("training needs a seed (--seed or BOLTZRELAX_SEED)")
    return config.train.seed


def total_updates(config: AppConfig, n: int) -> int:
    per_epoch = math.ceil(n / config.train.batch_size) if n else 0
    total = config.train.epochs * per_epoch
    if config.train.max_updates is not None:
        total = min(total, config.train.max_updates)
    return total


def write_config_header(handle, config: AppConfig) -> None:
    """First line of every CSV this package writes: the resolved config as JSON."""
    handle.write(f"# config: {json.dumps(config.model_dump(), sort_keys=True)}\n")


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def _minibatch(data: np.ndarray, seed: int, update: int, batch_size: int) -> np.ndarray:
    per_epoch = math.ceil(data.shape[0] / batch_size)
    epoch, index = divmod(update, per_epoch)
    order = make_rng(seed, _ORDER_STREAM, epoch).permutation(data.shape[0])
    return data[order[index * batch_size : (index + 1) * batch_size]]


def train(
    config: AppConfig,
    data: np.ndarray,
    output_dir: str | Path | None = None,
    *,
    resume: bool = False,
    until: int | None = None,
) -> TrainResult:
    """Train on a binary (n, D_x) array.

    With ``resume`` the run continues from ``output_dir/checkpoint.npz`` and
    appends to its metrics file; ``until`` stops after that many total
    updates (a checkpoint is always written on exit).
    """
    seed = require_seed(config)
    data = np.asarray(data, dtype=np.float64)
    out = Path(output_dir or config.train.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / CHECKPOINT_NAME
    metrics_path = out / METRICS_NAME
    total = total_updates(config, data.shape[0])

    if resume:
        state, rng = load_checkpoint(checkpoint_path)
        if rng is None:
            raise ValueError(f"{checkpoint_path} has no generator state to resume from")
        logger.info("Resuming from update %d of %d", state.updates, total)
    else:
        state = build_model(config, data.shape[1], make_rng(seed, _INIT_STREAM))
        state.warmup_updates = round(config.train.warmup_fraction * total)
        rng = make_rng(seed, _STEP_STREAM)
        with open(metrics_path, "w", newline="") as f:
            write_config_header(f, config)
            csv.writer(f).writerow(METRIC_COLUMNS)

    stop = total if until is None else min(total, until)
    tc = config.train
    started = time.perf_counter()
    logger.info("Training %d -> %d updates (K=%d, batch %d)", state.updates, stop, tc.k, tc.batch_size)

    with open(metrics_path, "a", newline="") as f:
        writer = csv.writer(f)
        for update in tqdm(range(state.updates, stop), desc="train", disable=None):
            batch = _minibatch(data, seed, update, tc.batch_size)
            log_now = (update + 1) % tc.log_every == 0 or update + 1 == total
            metrics = iw_gradient_step(state, batch, tc.k, rng, track_kl=log_now)
            if tc.ais_every and state.updates % tc.ais_every == 0:
                ais_rng = make_rng(seed, _AIS_STREAM, state.updates)
                state.log_z_snapshot = ais_log_partition(state.rbm, config.ais, ais_rng).estimate
                logger.info("AIS log Z = %.4f at update %d", state.log_z_snapshot, state.updates)
            if log_now:
                writer.writerow([
                    state.updates,
                    repr(metrics["bound"]),
                    repr(state.log_z_snapshot) if state.log_z_snapshot is not None else "nan",
                    repr(metrics["grad_norm"]),
                    repr(metrics["mf_kl_median"]),
                    f"{time.perf_counter() - started:.3f}",
                ])
            if tc.checkpoint_every and state.updates % tc.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, state, rng)

    save_checkpoint(checkpoint_path, state, rng)
    logger.info("Training stopped at update %d", state.updates)
    return TrainResult(state, checkpoint_path, metrics_path, state.log_z_snapshot)
