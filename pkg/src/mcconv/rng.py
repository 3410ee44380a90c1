"""Deterministic, order-independent random streams.

Every consumer asks for a stream by ``(tag, index)``. The stream key is a hash
of ``(seed, tag, index)`` fed to numpy's counter-based Philox generator, so
the numbers a consumer sees never depend on which other streams were drawn
first or on how work is split across threads.
"""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Seeded factory of independent random streams."""

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed

    def __repr__(self):
        return f"Rng(seed={self.seed})"

    def __eq__(self, other):
        return isinstance(other, Rng) and other.seed == self.seed

    def __hash__(self):
        return hash(("Rng", self.seed))

    def key(self, tag: str, index: int = 0) -> np.ndarray:
        digest = hashlib.blake2b(
            f"{self.seed}\x1f{tag}\x1f{int(index)}".encode(), digest_size=16
        ).digest()
        return np.frombuffer(digest, dtype="<u8").copy()

    def stream(self, tag: str, index: int = 0) -> np.random.Generator:
        """Fresh generator for ``(tag, index)``; same arguments, same numbers."""
        return np.random.Generator(np.random.Philox(key=self.key(tag, index)))

    def child(self, tag: str, index: int = 0) -> "Rng":
        """Derive a new seeded factory, e.g. one per training step."""
        k = self.key(tag, index)
        return Rng(int(k[0]))


def as_rng(random_state) -> Rng:
    """Coerce ``None``/int/Rng into an :class:`Rng` (``None`` means seed 0)."""
    if isinstance(random_state, Rng):
        return random_state
    if random_state is None:
        return Rng(0)
    if isinstance(random_state, (int, np.integer)):
        return Rng(int(random_state))
    raise TypeError(f"cannot build an Rng from {type(random_state).__name__}")
