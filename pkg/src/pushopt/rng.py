"""Counter-based random number generation.

Every random quantity in a simulation is a pure function of a 64-bit key
derived from (seed, stream, indices...) by chained splitmix64 rounds. This
makes draws replayable, independent of call order, and identical across
worker counts. The same mixing function is reimplemented for the numba
kernels (see _kernels.py); the scalar and vectorized paths here are exact
twins of each other.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_SECOND_WORD = 0xD6E8FEB86659FD93

# stream tags for domain separation of the derived keys
STREAM_NOISE = 0xA1  # additive gradient noise: (seed, tag, i, t, slot, k)
STREAM_INIT = 0xB2  # init-batch noise:         (seed, tag, i, r, k)
STREAM_SAMPLE = 0xC3  # datapoint selection:      (seed, tag, i, t)
STREAM_INIT_SAMPLE = 0xD4  # init datapoint selection: (seed, tag, i, r)
STREAM_TOPOLOGY = 0xE5  # per-step graph seeds:     (seed, tag, t)
STREAM_CHILD = 0xF6  # experiment seed fan-out:  (seed, tag, algo_idx, seed_idx)

_INV53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """One splitmix64 finalization round on a 64-bit integer."""
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integer parts into one 64-bit key, left to right."""
    h = mix64(parts[0] & MASK64)
    for p in parts[1:]:
        h = mix64(h ^ (p & MASK64))
    return h


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array."""
    z = (z + np.uint64(_GOLDEN)) & np.uint64(MASK64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def fold_array(h: np.ndarray, part) -> np.ndarray:
    """Fold one more part (array or scalar) into uint64 key array h."""
    return mix64_array(h ^ np.asarray(part, dtype=np.uint64))


def key_array(*parts) -> np.ndarray:
    """Vectorized derive_key; parts broadcast against each other."""
    parts = [np.asarray(p, dtype=np.uint64) for p in parts]
    h = mix64_array(np.broadcast_to(parts[0], np.broadcast_shapes(*(p.shape for p in parts))).copy())
    for p in parts[1:]:
        h = mix64_array(h ^ p)
    return h


def uniform_from_key(keys: np.ndarray) -> np.ndarray:
    """Map uint64 keys to floats in [0, 1)."""
    return (keys >> np.uint64(11)).astype(np.float64) * _INV53


def gaussian_from_key(keys) -> np.ndarray:
    """Map uint64 keys to standard normal draws via Box-Muller.

    u1 lands in (0, 1] so the log never sees zero; the second uniform comes
    from an extra mix round on the same key.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    u1 = ((keys >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV53
    second = mix64_array(keys ^ np.uint64(_SECOND_WORD))
    u2 = (second >> np.uint64(11)).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def gaussian_scalar(key: int) -> float:
    """One standard normal draw from a single key (same values as the array path)."""
    return float(gaussian_from_key(np.asarray([key], dtype=np.uint64))[0])


def choice_from_key(key: int, m: int) -> int:
    """Uniform index in [0, m) from a key (modulo bias negligible for m << 2^64)."""
    return int(key % m)


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; used for config fingerprints."""
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def spawn_generator(*parts: int) -> np.random.Generator:
    """A numpy Generator seeded from a derived key, for bulk sampling tasks."""
    return np.random.Generator(np.random.PCG64(derive_key(*parts)))
