"""Deterministic random streams.

Everything stochastic in this package (data splits, the hash embedder,
weight initialization, epoch shuffles) is driven by SplitMix64 so that
results are reproducible bit-for-bit across runs and platforms,
independent of numpy's generator versioning.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used to derive per-token seeds."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


class SplitMix64:
    """Sequential SplitMix64 generator over 64-bit state."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        # 53 mantissa bits -> [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle.

        Walks i from len-1 down to 1 and swaps with j = next_u64() mod (i+1).
        This exact procedure is a cross-run reproducibility contract; do not
        change the draw order or the reduction.
        """
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def u64_stream(seed: int, n: int) -> np.ndarray:
    """Vectorized SplitMix64: the first n outputs of SplitMix64(seed).

    Output i equals the scalar generator's (i+1)-th draw because the state
    sequence is simply seed + k * golden-ratio increment.
    """
    states = (np.uint64(seed) + np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN))
    z = states
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniform_array(seed: int, shape, lo: float, hi: float, dtype=np.float64) -> np.ndarray:
    """Uniform [lo, hi) array from a fresh SplitMix64 stream."""
    n = int(np.prod(shape)) if shape else 1
    u = (u64_stream(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return (lo + (hi - lo) * u).reshape(shape).astype(dtype)


def normal_array(seed: int, shape, std: float = 1.0, dtype=np.float64) -> np.ndarray:
    """Normal(0, std^2) array via Box-Muller on a fresh SplitMix64 stream."""
    n = int(np.prod(shape)) if shape else 1
    pairs = (n + 1) // 2
    u = (u64_stream(seed, 2 * pairs) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u1 = 1.0 - u[:pairs]  # (0, 1], keeps log finite
    u2 = u[pairs:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return (std * z[:n]).reshape(shape).astype(dtype)
