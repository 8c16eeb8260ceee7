"""Counter-based uniforms: u = hash(seed, kind, index), vectorised over numpy arrays.

Each value depends only on its key, so any entity's clock can be recomputed
in isolation and trials can be split across workers without sharing state.
The mixer is the SplitMix64 finaliser applied once per key component.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

KIND_FACILITY = 1
KIND_CLIENT = 2


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(v) -> np.ndarray:
    arr = np.asarray(v)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    if arr.dtype.kind == "i":
        return arr.astype(np.int64).view(np.uint64)
    if arr.dtype.kind == "O":
        return np.vectorize(lambda x: int(x) & _MASK64, otypes=[np.uint64])(arr)
    raise TypeError(f"integer keys required, got {arr.dtype}")


def hash_keys(seed, kind, index) -> np.ndarray:
    """64-bit hash of broadcast (seed, kind, index) integer arrays."""
    s, k, i = np.broadcast_arrays(_as_u64(seed), _as_u64(kind), _as_u64(index))
    with np.errstate(over="ignore"):
        h = _mix(s + _GOLDEN)
        h = _mix((h ^ k) + _GOLDEN)
        h = _mix((h ^ i) + _GOLDEN)
    return h


def uniform(seed, kind, index) -> np.ndarray:
    """Uniform draws in the open interval (0, 1), one per broadcast key."""
    h = hash_keys(seed, kind, index)
    # 53 high bits, offset by half a unit so 0 and 1 are unreachable
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def exponential(seed, kind, index, rate) -> np.ndarray:
    """Exp(rate) variates by inverse CDF: -ln(u) / rate."""
    return -np.log(uniform(seed, kind, index)) / rate
