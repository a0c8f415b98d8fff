"""Deterministic random streams.

Every source of randomness in the package flows through `Rng`, a PCG64
generator keyed by a 64-bit seed plus a tuple of sub-stream keys. Identical
(seed, keys, call sequence) produces identical outputs on every platform,
and child streams derived from different keys are statistically independent.
Training code derives fresh per-step children, e.g.
``Rng(seed).child("dropout", step)``, which keeps checkpoint-resume exact
without serializing generator state.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_word(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    if isinstance(key, str):
        digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"rng stream keys must be int or str, got {type(key).__name__}")


class Rng:
    """A named deterministic PCG64 stream."""

    algorithm = "pcg64"

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed) & _MASK64
        self.key = tuple(key)
        entropy = [self.seed] + [_key_word(k) for k in self.key]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, *key) -> "Rng":
        """Derive an independent stream for (self.key + key)."""
        return Rng(self.seed, self.key + key)

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def shuffle(self, x):
        self._gen.shuffle(x)

    def truncated_normal(self, size, std=1.0, bound=2.0):
        """Normal(0, std) with samples outside +-bound*std redrawn."""
        out = self._gen.normal(0.0, std, size)
        flat = out.reshape(-1)
        bad = np.abs(flat) > bound * std
        while bad.any():
            flat[bad] = self._gen.normal(0.0, std, int(bad.sum()))
            bad = np.abs(flat) > bound * std
        return out

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self.key!r})"
