"""Seeded counter-based random generators."""

from __future__ import annotations

import json
from typing import Any

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *stream)``.

    Distinct stream keys give statistically independent generators, so a
    result only depends on the seed and the key, never on call order elsewhere.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def dump_state(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, default=_jsonable)


def load_state(text: str) -> np.random.Generator:
    state: dict[str, Any] = json.loads(text)
    bit_gen = np.random.Philox()
    state["state"]["counter"] = np.asarray(state["state"]["counter"], dtype=np.uint64)
    state["state"]["key"] = np.asarray(state["state"]["key"], dtype=np.uint64)
    state["buffer"] = np.asarray(state["buffer"], dtype=np.uint64)
    bit_gen.state = state
    return np.random.Generator(bit_gen)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
