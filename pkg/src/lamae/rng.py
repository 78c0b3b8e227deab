"""Keyed counter-based random streams.

Every consumer (parameter init, masking, data sampling, dropout) derives its
own Philox generator from ``(seed, consumer, *keys)``.  Because a stream is a
pure function of its key, draws for one study never depend on which other
studies share its batch, and resuming a run only needs the step counter.
"""

from __future__ import annotations

import hashlib

import numpy as np

INIT = "init"
MASK = "mask"
DATA = "data"
VIEWS = "views"
DROPOUT = "dropout"
AUGMENT = "augment"
EVAL = "eval"


def _word(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, consumer: str, *keys: int | str) -> np.random.Generator:
    """Return an independent generator for ``consumer`` under ``keys``."""
    entropy = [_word(seed), _word(consumer), *(_word(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
