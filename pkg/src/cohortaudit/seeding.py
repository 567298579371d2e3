"""Counter-based seed derivation.

Every random quantity is addressed by a tuple of integer keys mixed into a
64-bit master seed, so generation order and worker count never change the
values drawn.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    h = splitmix64(master & MASK64)
    for k in keys:
        h = splitmix64(h ^ (int(k) & MASK64))
    return h


def rng_for(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))


# Vectorised variants operate on uint64 arrays; numpy wraps on overflow.

def _mix_u64(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seeds(master: int, *keys) -> np.ndarray:
    """Array form of :func:`derive_seed`; keys broadcast against each other."""
    with np.errstate(over="ignore"):
        h = np.asarray(_mix_u64(np.uint64(master & MASK64) + np.zeros((), np.uint64)))
        for k in keys:
            h = _mix_u64(h ^ np.asarray(k).astype(np.uint64))
    return h


def uniforms(seeds: np.ndarray, counter: int, width: int) -> np.ndarray:
    """``width`` uniforms in (0, 1) per seed, drawn at counter block ``counter``."""
    seeds = np.asarray(seeds, np.uint64)
    ctr = np.arange(width, dtype=np.uint64) | np.uint64((counter & 0xFFFFFFFF) << 32)
    with np.errstate(over="ignore"):
        bits = _mix_u64(seeds[..., None] ^ _mix_u64(ctr))
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def normals(seeds: np.ndarray, counter: int, width: int) -> np.ndarray:
    return ndtri(uniforms(seeds, counter, width))
