"""Counter-based random draws keyed by (seed, stream, day, id, index).

Every draw is a pure function of its key, so per-agent generation does not
depend on evaluation order and two agents never share a stream.
"""
from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def keyed_hash(seed: int, stream: int, day, ids, index=0) -> np.ndarray:
    """64-bit hash of the key tuple, broadcast over array arguments."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLDEN)
        h = _mix(h ^ (np.uint64(stream) * _GOLDEN))
        h = _mix(h ^ np.asarray(day, dtype=np.int64).astype(np.uint64))
        h = _mix(h + np.asarray(ids, dtype=np.int64).astype(np.uint64) * _GOLDEN)
        h = _mix(h ^ np.asarray(index, dtype=np.int64).astype(np.uint64))
    return h


def keyed_uniform(seed: int, stream: int, day, ids, index=0) -> np.ndarray:
    """Uniform doubles in [0, 1) with 53 random bits."""
    h = keyed_hash(seed, stream, day, ids, index)
    return (h >> _S11).astype(np.float64) * (1.0 / 9007199254740992.0)
