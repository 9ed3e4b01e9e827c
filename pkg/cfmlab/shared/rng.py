from __future__ import annotations

import os
import zlib
from typing import Optional, Union

import numpy as np

SEED_ENV = "FLOWMATCH_SEED"

# Every stream is Philox (counter based) keyed by a SeedSequence, so a given
# (seed, key) pair produces the same numbers on every platform.


def _key_part(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def make_rng(seed: int, *key: Union[int, str]) -> np.random.Generator:
    """Generator for ``seed``; a non-empty ``key`` selects an independent child stream."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def resolve_seed(explicit: Optional[int] = None, fallback: int = 0) -> int:
    if explicit is not None:
        return int(explicit)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        return int(env)
    return fallback
