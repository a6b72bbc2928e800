"""Seeding, hashing and small I/O helpers used by several stages."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

# Fixed spawn keys, one per RNG consumer. Derived streams are independent, so
# `pipeline` output is byte-identical to running the stages one at a time.
KEY_SYNTH = (0,)
KEY_SSAD_INIT = (1, 0)
KEY_SSAD_SHUFFLE = (1, 1)
KEY_TAG_INIT = (2, 0)
KEY_TAG_SHUFFLE = (2, 1)
KEY_BASELINE = (5,)
KEY_GRADCHECK = (7,)


def rng_for(seed: int, key: tuple[int, ...]) -> np.random.Generator:
    """Deterministic per-consumer RNG derived from the single global seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json_atomic(path: str | Path, obj) -> None:
    """Serialize with a stable key order and replace the target atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def read_json(path: str | Path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def worker_count() -> int:
    """Evaluation/inference fan-out width; TAPKIT_THREADS caps it (default 1)."""
    raw = os.environ.get("TAPKIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def map_ordered(fn: Callable[[T], R], items: Sequence[T], threads: int | None = None) -> list[R]:
    """Apply fn to items, optionally on a thread pool, preserving input order."""
    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
