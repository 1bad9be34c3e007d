"""Named, counter-based random streams.

All randomness in the package funnels through `stream(seed, *tags)`: a
Philox (counter-based) generator keyed by the master seed plus a stable
hash of the tag tuple. Distinct tags give statistically independent
streams, and a fixed (seed, tags) pair is bit-reproducible regardless of
how many other streams were drawn from, which is what makes block-parallel
sampling deterministic.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Per-sample-block stream granularity used by samplers; fixed so that results
# do not depend on thread count or batching of the consumer.
SAMPLE_BLOCK = 1 << 14


def _tag_entropy(tags: tuple) -> list[int]:
    digest = hashlib.sha256(repr(tags).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for (seed, tags); same inputs, same bits."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *_tag_entropy(tags)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit sub-seed for (seed, tags); used to name seed streams."""
    digest = hashlib.sha256(repr((int(seed), tags)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def gaussian_matrix(seed: int, n: int, d: int, *tags) -> np.ndarray:
    """N(0,1) matrix drawn in fixed-size blocks, one stream per block.

    Row i is produced by the stream for block i // SAMPLE_BLOCK, so any
    blockwise-parallel consumer reproduces the same matrix bit for bit.
    """
    out = np.empty((n, d))
    for start in range(0, n, SAMPLE_BLOCK):
        stop = min(start + SAMPLE_BLOCK, n)
        g = stream(seed, *tags, "block", start // SAMPLE_BLOCK)
        out[start:stop] = g.standard_normal((stop - start, d))
    return out
