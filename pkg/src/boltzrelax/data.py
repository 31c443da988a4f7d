"""Dataset ingestion (IDX, plain-text binary rows) and synthetic binary mixtures."""

from __future__ import annotations

import gzip
import hashlib
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import NamedTuple

import numpy as np

from boltzrelax.config import AppConfig, SyntheticConfig
from boltzrelax.core.rng import make_rng
from boltzrelax.errors import IdxFormatError, TruncatedFileError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_MAX_ITEMS = 1 << 31
BASELINE_PSEUDO_COUNT = 0.5
BINARIZED_CACHE_SIZE = 4

MNIST_TEXT_FILES = ("binarized_mnist_train.amat", "binarized_mnist_test.amat")
MNIST_IDX_FILES = ("train-images-idx3-ubyte", "t10k-images-idx3-ubyte")

_binarized_cache: OrderedDict[tuple[str, int], np.ndarray] = OrderedDict()


class Dataset(NamedTuple):
    train: np.ndarray
    test: np.ndarray


class SyntheticDataset(NamedTuple):
    data: np.ndarray
    prototypes: np.ndarray


def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def load_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (big-endian header).

    Image files (magic 0x803) come back as (n, rows * cols) floats scaled to
    [0, 1]; label files (magic 0x801) as an int64 vector.
    """
    path = Path(path)
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file ends inside the IDX magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES_MAGIC:
        header = ">IIII"
    elif magic == IDX_LABELS_MAGIC:
        header = ">II"
    else:
        raise IdxFormatError(
            f"{path}: bad IDX magic 0x{magic:08x} (expected 0x{IDX_IMAGES_MAGIC:08x} or 0x{IDX_LABELS_MAGIC:08x})",
            expected=IDX_IMAGES_MAGIC,
            found=magic,
        )
    size = struct.calcsize(header)
    if len(raw) < size:
        raise TruncatedFileError(f"{path}: file ends inside the IDX header")
    _, count, *shape = struct.unpack(header, raw[:size])
    item = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if count * item >= IDX_MAX_ITEMS:
        raise IdxFormatError(f"{path}: IDX dimensions {count} x {shape} overflow")
    payload = raw[size:]
    if len(payload) < count * item:
        raise TruncatedFileError(f"{path}: expected {count * item} data bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype=np.uint8, count=count * item)
    if magic == IDX_LABELS_MAGIC:
        return values.astype(np.int64)
    logger.debug("Loaded %d images of %s from %s", count, shape, path)
    return values.reshape(count, item).astype(np.float64) / 255.0


def write_idx(path: str | Path, values: np.ndarray) -> Path:
    """Write (n, rows, cols) images (uint8, or floats in [0, 1]) or a 1-D label vector as IDX."""
    path = Path(path)
    values = np.asarray(values)
    if np.issubdtype(values.dtype, np.integer):
        values = values.astype(np.uint8)
    elif values.dtype != np.uint8:
        values = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    if values.ndim == 3:
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *values.shape)
    elif values.ndim == 1:
        header = struct.pack(">II", IDX_LABELS_MAGIC, values.shape[0])
    else:
        raise ValueError(f"IDX writer takes (n, rows, cols) images or 1-D labels, got shape {values.shape}")
    with _open(path, "wb") as f:
        f.write(header + np.ascontiguousarray(values).tobytes())
    return path


def load_binary_text(path: str | Path) -> np.ndarray:
    """Rows of 0/1, either whitespace-separated or written as contiguous digits."""
    rows = []
    with _open(Path(path), "rt") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            tokens = line.split() if any(ch.isspace() for ch in line) else list(line)
            rows.append([float(t) for t in tokens])
    data = np.asarray(rows, dtype=np.float64)
    if data.size and not np.all((data == 0.0) | (data == 1.0)):
        raise ValueError(f"{path}: rows must contain only 0 and 1")
    return data


def dataset_hash(data: np.ndarray) -> str:
    data = np.ascontiguousarray(data)
    digest = hashlib.sha256(str(data.shape).encode())
    digest.update(data.astype(np.float64).tobytes())
    return digest.hexdigest()


def binarize_static(images: np.ndarray, seed: int) -> np.ndarray:
    """Sample every pixel once as Bernoulli(pixel).

    The read-only result is cached per (images, seed); only the most recent
    BINARIZED_CACHE_SIZE pairs are kept.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    key = (dataset_hash(images), seed)
    cached = _binarized_cache.get(key)
    if cached is not None:
        _binarized_cache.move_to_end(key)
        return cached
    cached = (make_rng(seed).random(images.shape) < images).astype(np.float64)
    cached.flags.writeable = False
    _binarized_cache[key] = cached
    # least recently used draws go first
    while len(_binarized_cache) > BINARIZED_CACHE_SIZE:
        _binarized_cache.popitem(last=False)
    return cached


def make_synthetic(synthetic: SyntheticConfig, seed: int) -> SyntheticDataset:
    """n points: a uniformly chosen prototype with every bit flipped with probability ``noise``."""
    rng = make_rng(seed)
    prototypes = (rng.random((synthetic.modes, synthetic.dim)) < 0.5).astype(np.float64)
    labels = rng.integers(0, synthetic.modes, size=synthetic.n)
    flips = rng.random((synthetic.n, synthetic.dim)) < synthetic.noise
    data = np.abs(prototypes[labels] - flips)
    return SyntheticDataset(data.reshape(synthetic.n, synthetic.dim), prototypes)


def bernoulli_baseline_ll(train: np.ndarray, test: np.ndarray) -> float:
    """Mean test log-likelihood of independent Bernoulli pixels fit to ``train`` (pseudo-count 0.5)."""
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    p = (train.sum(axis=0) + BASELINE_PSEUDO_COUNT) / (train.shape[0] + 2.0 * BASELINE_PSEUDO_COUNT)
    ll = test @ np.log(p) + (1.0 - test) @ np.log1p(-p)
    return float(np.mean(ll))


def _find(data_dir: Path, name: str) -> Path | None:
    for candidate in (data_dir / name, data_dir / f"{name}.gz"):
        if candidate.exists():
            return candidate
    return None


def load_dataset(config: AppConfig) -> Dataset:
    """Train/test split for the configured dataset."""
    data_config = config.data
    if data_config.dataset == "synthetic":
        synthetic = data_config.synthetic
        both = make_synthetic(synthetic.model_copy(update={"n": synthetic.n + synthetic.n_test}), data_config.binarize_seed)
        return Dataset(both.data[: synthetic.n], both.data[synthetic.n :])

    data_dir = Path(data_config.data_dir)
    text = [_find(data_dir, name) for name in MNIST_TEXT_FILES]
    if all(text):
        logger.info("Loading pre-binarized MNIST from %s", data_dir)
        return Dataset(load_binary_text(text[0]), load_binary_text(text[1]))
    idx = [_find(data_dir, name) for name in MNIST_IDX_FILES]
    if all(idx):
        logger.info("Loading MNIST IDX files from %s (static binarization, seed %d)", data_dir, data_config.binarize_seed)
        train = binarize_static(load_idx(idx[0]), data_config.binarize_seed)
        test = binarize_static(load_idx(idx[1]), data_config.binarize_seed + 1)
        return Dataset(train, test)
    raise FileNotFoundError(
        f"no MNIST files in {data_dir}: expected {' + '.join(MNIST_TEXT_FILES)} or {' + '.join(MNIST_IDX_FILES)}"
    )
