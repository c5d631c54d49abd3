"""Named, hashed random streams derived from one master seed.

Every stochastic step asks for a stream by ``(seed, *keys)``; the keys are
hashed into the ``spawn_key`` of a :class:`numpy.random.SeedSequence`, so
the stream for sample ``i`` does not depend on how many other samples were
drawn first or on which worker draws it.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

DEFAULT_SEED = 42
SEED_ENV_VAR = "COPYGRAPH_SEED"

T = TypeVar("T")
R = TypeVar("R")


def _key_to_int(key: object) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def seed_sequence(seed: int, *keys: object) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    """Generator for the sub-stream ``(seed, *keys)``.

    >>> a = derive_rng(7, "copy", 3).random()
    >>> b = derive_rng(7, "copy", 3).random()
    >>> a == b
    True
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys: object) -> int:
    """A 63-bit integer seed for the sub-stream, for APIs that want an int."""
    return int(seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return DEFAULT_SEED
    value = int(raw)
    if not 0 <= value < 2**64:
        raise ValueError(f"{SEED_ENV_VAR} must be an unsigned 64-bit value")
    return value


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Map ``fn`` over ``items``, preserving input order.

    Results are collected in index order so that downstream reductions are
    identical for any worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)
