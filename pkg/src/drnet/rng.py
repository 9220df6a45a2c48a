"""SplitMix64, the seeded generator behind parameter init and scene synthesis.

The algorithm (Steele, Lea & Flood 2014) is counter based, so the i-th output
of a stream seeded with ``s`` is

    z = s + (i + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

and a uniform double in [0, 1) is ``(out >> 11) * 2**-53``. Everything here is
unsigned 64-bit wrapping arithmetic, so streams are identical on every
platform.
"""
from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def splitmix64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Outputs ``offset .. offset+count-1`` of the stream seeded with ``seed``."""
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK) + idx * np.uint64(GAMMA)
        return _mix(z)


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a sub-stream, e.g. ``derive_seed(run_seed, scene_index)``."""
    s = seed & _MASK
    for k in keys:
        s = int(splitmix64(s ^ (k & _MASK), 1)[0])
    return s


class SplitMix64:
    """Stateful view over the counter-based stream."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self.counter = 0

    def next_u64(self, count: int) -> np.ndarray:
        out = splitmix64(self.seed, count, self.counter)
        self.counter += count
        return out

    def uniform(self, low=0.0, high=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return low + int(self.uniform() * (high - low))
