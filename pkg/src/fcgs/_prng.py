"""xoshiro256** seeded through splitmix64, the codec's only randomness source.

Encoder and decoder must draw identical sequences, so nothing here touches
numpy's generators (their streams are not a documented contract).
"""

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def seed_state(seed: int) -> np.ndarray:
    """Four state words produced by successive splitmix64 outputs from ``seed``."""
    x = int(seed) & _MASK64
    words = []
    for _ in range(4):
        x = (x + 0x9E3779B97F4A7C15) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        words.append(z ^ (z >> 31))
    return np.array(words, dtype=np.uint64)


@nb.njit(inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(inline="always")
def _next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@nb.njit(cache=True)
def _fill_uniform(s, out):
    scale = 1.0 / 9007199254740992.0  # 2**-53
    for i in range(out.size):
        out[i] = np.float64(_next(s) >> np.uint64(11)) * scale


@nb.njit(cache=True)
def _fisher_yates(s, perm):
    for i in range(perm.size - 1, 0, -1):
        hi = _next(s) >> np.uint64(32)
        j = np.int64((hi * np.uint64(i + 1)) >> np.uint64(32))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp


class Xoshiro256:
    """Stateful generator; ``uniform`` consumes one 64-bit output per value."""

    def __init__(self, seed: int):
        self.state = seed_state(seed)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        out = np.empty(int(n), dtype=np.float64)
        _fill_uniform(self.state, out)
        return low + (high - low) * out

    def permutation(self, n: int) -> np.ndarray:
        if n >= 1 << 32:
            raise ValueError("permutation length must be below 2**32")
        perm = np.arange(n, dtype=np.int64)
        _fisher_yates(self.state, perm)
        return perm
