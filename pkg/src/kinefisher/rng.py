"""Deterministic, splittable random streams.

Randomness is organized as a tree rooted at a single integer seed. Every
node is addressed by its path of labels from the root; the (seed, path)
pair is hashed into a Philox key, so each node owns a counter-based
stream independent of every other node and of the order in which streams
are created or consumed. This is what makes sampling reproducible under
any execution order: a logical draw is tied to its address, not to how
many draws happened before it.

Typical use::

    rng = RandomTree(seed)
    for k in range(n):
        draw = sample(..., rng.child("samples").child(k))

A node should be used either as a branch point (children only) or as a
single stream (one ``generator()`` call); reusing the same node for two
generators replays identical bits.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RandomTree", "as_generator"]


def _hash_label(label) -> bytes:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be nonnegative, got {label}")
        return b"i" + int(label).to_bytes(16, "little")
    if isinstance(label, str):
        return b"s" + hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    raise TypeError(f"stream labels must be int or str, got {type(label).__name__}")


class RandomTree:
    """A node in the stream tree. Immutable; children share nothing."""

    __slots__ = ("_seed", "_digest")

    def __init__(self, seed: int, _digest: bytes | None = None):
        if _digest is None:
            if not isinstance(seed, (int, np.integer)) or seed < 0:
                raise ValueError(f"seed must be a nonnegative integer, got {seed!r}")
            _digest = hashlib.blake2b(
                b"kinefisher-root" + int(seed).to_bytes(16, "little"), digest_size=16
            ).digest()
        self._seed = int(seed)
        self._digest = _digest

    @property
    def seed(self) -> int:
        return self._seed

    def child(self, label) -> "RandomTree":
        """Return the child node addressed by ``label`` (int or str)."""
        h = hashlib.blake2b(digest_size=16)
        h.update(self._digest)
        h.update(_hash_label(label))
        return RandomTree(self._seed, h.digest())

    def generator(self) -> np.random.Generator:
        """A fresh Generator for this node's stream (Philox, counter 0).

        Calling twice returns generators that replay identical bits.
        """
        key = np.frombuffer(self._digest, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RandomTree(seed={self._seed}, node={self._digest.hex()[:12]})"


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomTree node or a numpy Generator; return a Generator."""
    if isinstance(rng, RandomTree):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomTree or numpy Generator, got {type(rng).__name__}")
