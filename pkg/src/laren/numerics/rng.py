"""PCG32 (XSH-RR, 64-bit state) with Box-Muller normals.

The sequence is fully determined by ``(seed, stream)`` and uses only integer
arithmetic plus IEEE double ``log``/``cos``/``sqrt``, so golden files made on
one machine reproduce on another.

Uniform draws are ``u32 / 2**32`` in ``[0, 1)``.  Each normal draw consumes
exactly two uniforms ``u1, u2`` (in that order) and returns
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``; the sine partner is discarded so the
stream position never depends on call history.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

MULTIPLIER = 6364136223846793005
_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


class Rng:
    def __init__(self, seed: int, stream: int = 0):
        self.seed = seed & _MASK64
        self.stream = stream & _MASK64
        self.inc = ((self.stream << 1) | 1) & _MASK64
        self.state = 0
        self._step()
        self.state = (self.state + self.seed) & _MASK64
        self._step()

    @classmethod
    def for_name(cls, seed: int, name: str) -> "Rng":
        """Independent stream keyed by a string (CRC-32 of its UTF-8 bytes)."""
        return cls(seed, zlib.crc32(name.encode("utf-8")))

    def _step(self) -> None:
        self.state = (self.state * MULTIPLIER + self.inc) & _MASK64

    def next_u32(self) -> int:
        old = self.state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def uniform(self) -> float:
        return self.next_u32() / 4294967296.0

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64).reshape(shape)

    def normal_array(self, shape, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        out = np.array([self.normal() for _ in range(n)], dtype=np.float64)
        return (out * std).reshape(shape)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` (rejection on the low threshold)."""
        threshold = (1 << 32) % n
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)
