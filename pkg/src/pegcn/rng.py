"""Portable, seedable random streams.

All randomness in the package comes from SplitMix64 (Steele, Lea & Flood
2014), chosen because it is a handful of 64-bit integer operations and
therefore trivial to reproduce bit-for-bit in any language:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

All arithmetic is modulo 2**64.  The k-th output (k = 1, 2, ...) depends only
on ``seed + k * GAMMA``, so blocks of outputs are computed at once with numpy
``uint64`` arithmetic.

Derived quantities:

* uniform double in [0, 1): ``(u >> 11) * 2**-53``
* bounded integer in [0, n): rejection sampling on ``u`` with
  ``limit = 2**64 - (2**64 % n)``; outputs ``u >= limit`` are discarded and
  the next output is used, otherwise ``u % n``
* standard normal: Box-Muller on two uniforms ``u1, u2`` taken in order,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``; one normal per pair

Seeds for sub-streams are derived by :func:`derive_seed`, which hashes a
root seed together with a tag and any number of indices or strings using
BLAKE2b with an 8-byte digest (read little-endian).
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def derive_seed(root: int, *parts) -> int:
    """Hash ``root`` and ``parts`` (ints or strings) into a 64-bit seed."""
    text = ":".join([str(int(root) & MASK64)] + [str(p) for p in parts])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SplitMix64:
    """Sequential SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self, n: int | None = None):
        """Next output, or the next ``n`` outputs as a ``uint64`` array."""
        if n is None:
            return int(self.next_u64(1)[0])
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])

    def permutation_prefix(self, n: int, k: int) -> list[int]:
        """First ``k`` entries of a Fisher-Yates shuffle of ``range(n)``.

        Step ``i`` (i = 0..k-1) swaps position ``i`` with ``i + below(n - i)``.
        """
        if not 0 <= k <= n:
            raise ValueError(f"prefix length {k} outside [0, {n}]")
        idx = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

    def permutation(self, n: int) -> list[int]:
        return self.permutation_prefix(n, n)
