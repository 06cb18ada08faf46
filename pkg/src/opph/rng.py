"""Counter-based pseudorandom generator for the synthetic data pipeline.

Every random quantity is a pure function of (seed, counter): the k-th draw of
a stream with base ``b`` is ``mix64(b + (k+1) * GOLDEN)`` where ``mix64`` is
the SplitMix64 shift-xor-multiply finalizer and GOLDEN = 0x9E3779B97F4B7C15.
Sub-streams are derived with the same function (``substream(b, k)``), so the
whole scheme is integer-only, order-independent and reproduces byte-identical
output across platforms and reimplementations.
"""

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4B7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: np.ndarray | int) -> np.ndarray | np.uint64:
    """SplitMix64 finalizer; accepts a uint64 scalar or array (wrapping)."""
    with np.errstate(over="ignore"):
        z = np.uint64(z) if np.isscalar(z) else np.asarray(z, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def substream(base: int, k: int) -> int:
    """Base of derived stream k; also the scalar form of a counter draw."""
    b = (int(base) + (k + 1) * int(GOLDEN)) % (1 << 64)
    return int(mix64(b))


def draws(base: int, start: int, count: int) -> np.ndarray:
    """uint64 draws [start, start+count) of the stream with the given base."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(base) + idx * GOLDEN)


def uniform_ints(base: int, start: int, count: int, lo: int, hi: int) -> np.ndarray:
    """Integers in [lo, hi] by modulo reduction of counter draws.

    The modulo bias is below span/2^64 and irrelevant for texture and noise
    synthesis.
    """
    span = np.uint64(hi - lo + 1)
    return (draws(base, start, count) % span).astype(np.int64) + lo


@njit(cache=True, nogil=True, inline="always")
def mix64_scalar(z):
    """SplitMix64 finalizer for use inside jitted kernels (uint64 in/out)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))
