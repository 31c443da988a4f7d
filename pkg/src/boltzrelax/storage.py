"""Versioned key-value containers persisted as ``.npz`` archives with atomic writes."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any

import numpy as np

from boltzrelax.errors import CheckpointError

logger = logging.getLogger(__name__)


def write_container(path: str | Path, fmt: str, version: int, fields: dict[str, Any]) -> Path:
    """Write ``fields`` plus the ``format``/``version`` tags, replacing ``path`` atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    payload = {key: np.asarray(value) for key, value in fields.items()}
    with open(tmp_path, "wb") as f:
        np.savez(f, format=np.asarray(fmt), version=np.asarray(version), **payload)
    os.replace(tmp_path, path)
    logger.debug("Wrote %s container v%d to %s", fmt, version, path)
    return path


def read_container(path: str | Path, fmt: str, version: int) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no container at {path}")
    with np.load(path, allow_pickle=False) as archive:
        data = {key: archive[key] for key in archive.files}
    found_fmt = str(data.pop("format", ""))
    found_version = int(data.pop("version", -1))
    if found_fmt != fmt:
        raise CheckpointError(f"{path}: expected format {fmt!r}, found {found_fmt!r}")
    if found_version != version:
        raise CheckpointError(f"{path}: unsupported {fmt} version {found_version} (want {version})")
    return data


def require(data: dict[str, np.ndarray], *keys: str) -> None:
    missing = [k for k in keys if k not in data]
    if missing:
        raise CheckpointError(f"container is missing keys: {', '.join(missing)}")
