# tpgsr/utils.py

import hashlib
import os
from typing import Iterator, List, Sequence, TypeVar

import numpy as np

from .exceptions import ConfigurationError

T = TypeVar("T")

SPLIT_IDS = {"train": 0, "test": 1}


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def batched(items: Sequence[T], size: int) -> Iterator[List[T]]:
    if size < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {size}", component="batching")
    for start in range(0, len(items), size):
        yield list(items[start : start + size])


def resolve_threads(requested: int = 0) -> int:
    """Worker count: ``requested`` if positive, else ``TPGSR_THREADS`` (default 1)."""
    if requested > 0:
        return requested
    raw = os.environ.get("TPGSR_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError as e:
        raise ConfigurationError(f"TPGSR_THREADS must be an integer, got {raw!r}", component="env") from e
    return max(1, threads)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
