"""Named, order-independent random substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Generator for the substream named by `path` under `seed`.

    Streams with different paths are statistically independent, and the
    mapping does not depend on the order in which streams are created,
    so results are invariant to trial scheduling.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
