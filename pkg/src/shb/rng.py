"""Counter-based random number generation.

Synthetic data must be reproducible bit-for-bit from a recorded seed, across
runs, platforms and (as far as libm allows) languages, so this module uses a
stateless counter-based generator instead of a stateful PRNG: a (seed,
counter) pair always maps to the same value regardless of draw order.

The core is the SplitMix64 finalizer with the usual constants:

    mix64(z): z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
              z ^= z >> 27;  z *= 0x94D049BB133111EB
              z ^= z >> 31                      (all mod 2**64)

    raw53(seed, i)  = mix64(seed + (i + 1) * GOLDEN_GAMMA) >> 11
    uniform(seed, i) = raw53(seed, i) * 2**-53             in [0, 1)

Gaussian variates come from one Box-Muller half per counter: normal(seed, i)
uses the uniforms at counters (2i, 2i+1), with the first raw value shifted by
one so the logarithm argument lies in (0, 1].

Independent streams (one per simulated condition) are derived by

    derive_seed(seed, k) = mix64(seed + (k + 1) * GOLDEN_GAMMA ^ STREAM_SALT)

where GOLDEN_GAMMA = 0x9E3779B97F4A7C15 and STREAM_SALT = 0x5851F42D4C957F2D.
The salt keeps stream seeds distinct from the counter sequence of the parent
seed.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
STREAM_SALT = 0x5851F42D4C957F2D
_MASK64 = (1 << 64) - 1
_MIX_MULT_1 = 0xBF58476D1CE4E5B9
_MIX_MULT_2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python integer (mod 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_MULT_1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_MULT_2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Seed for derived stream `stream` (0-based) of a parent seed."""
    if stream < 0:
        raise ValueError("stream index must be non-negative")
    base = (seed + ((stream + 1) * GOLDEN_GAMMA ^ STREAM_SALT)) & _MASK64
    return mix64(base)


def _raw53(seed: int, start: int, count: int) -> np.ndarray:
    """53-bit counter outputs for counters start .. start+count-1."""
    if count < 0 or start < 0:
        raise ValueError("counter range must be non-negative")
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + idx * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_MULT_1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_MULT_2)
        z = z ^ (z >> np.uint64(31))
    return z >> np.uint64(11)


def uniform_stream(seed: int, start: int, count: int) -> np.ndarray:
    """Uniform [0, 1) variates at counters start .. start+count-1."""
    return _raw53(seed, start, count).astype(np.float64) * 2.0**-53


def normal_stream(seed: int, start: int, count: int) -> np.ndarray:
    """Standard-normal variates at indices start .. start+count-1.

    Index i consumes the uniforms at counters (2i, 2i+1); indices are
    addressable independently, so disjoint ranges never share counters.
    """
    raw = _raw53(seed, 2 * start, 2 * count)
    u1 = (raw[0::2].astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
    u2 = raw[1::2].astype(np.float64) * 2.0**-53  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
