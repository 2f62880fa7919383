"""Counter-based random numbers keyed on integer index tuples.

Every draw is a pure function of ``(seed, *keys)``: there is no generator
state, so a value attached to neuron ``(layer, j, k)`` is the same no matter
how many other neurons are generated, or in which order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(h: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    with np.errstate(over="ignore"):
        h = h + _GOLDEN
        h = (h ^ (h >> np.uint64(30))) * _M1
        h = (h ^ (h >> np.uint64(27))) * _M2
        return h ^ (h >> np.uint64(31))


def keyed_bits(seed: int, *keys) -> np.ndarray:
    """64 random bits for each broadcast combination of ``keys``."""
    h = _mix(np.asarray(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    for key in keys:
        k = np.asarray(key).astype(np.int64).astype(np.uint64)
        h = _mix(h ^ _mix(k))
    return np.asarray(h)


def keyed_uniform(seed: int, *keys) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    bits = keyed_bits(seed, *keys)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def keyed_normal(seed: int, *keys) -> np.ndarray:
    """Standard normal draws by inversion of the keyed uniforms."""
    return ndtri(keyed_uniform(seed, *keys))
