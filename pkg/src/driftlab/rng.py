"""Counter-based random number streams.

All randomness in driftlab is derived from Philox streams keyed by
(seed, purpose, counter) so that results are reproducible bit-for-bit
regardless of evaluation order, worker count, or platform.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# Domain-separation tags for the different consumers of randomness.
TAG_PATH = 0x9E3779B97F4A7C15
TAG_BUMP = 0xC2B2AE3D27D4EB4F
TAG_BERNOULLI = 0x165667B19E3779F9


def mix64(x: int) -> int:
    """SplitMix64 finalizer; avalanche a 64-bit integer."""
    x &= MASK64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & MASK64
    return (x ^ (x >> 31)) & MASK64


def stream(seed: int, tag: int, *counters: int) -> np.random.Generator:
    """Return a Generator for the stream identified by (seed, tag, counters)."""
    key = mix64(seed ^ tag)
    for c in counters:
        key = mix64(key ^ mix64(c & MASK64))
    return np.random.Generator(np.random.Philox(key=key))


def bernoulli(seed: int, index: int, p: float) -> int:
    """Deterministic Bernoulli(p) variable attached to integer index."""
    g = stream(seed, TAG_BERNOULLI, index)
    return int(g.random() < p)
