"""Deterministic, splittable random streams.

Every stream is a numpy ``Philox`` counter-based generator keyed by a
``SeedSequence(seed, spawn_key=stream)``. The pair ``(seed, stream)`` fully
determines the output sequence, so golden tests are portable across
platforms and independent of global numpy state.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10/seedsequence"


class Rng:
    """A named random stream.

    Parameters
    ----------
    seed : int
        64-bit unsigned seed.
    stream : tuple of int
        Path identifying the stream below ``seed``; ``()`` is the root.

    Child streams are derived with :meth:`child` (explicit index) or
    :meth:`spawn` (next index from an internal counter), so the same
    construction sequence always yields the same streams.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int = 0, stream: tuple = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream = tuple(int(s) for s in stream)
        self._spawned = 0
        ss = np.random.SeedSequence(seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def child(self, index: int) -> "Rng":
        return Rng(self.seed, self.stream + (int(index),))

    def spawn(self) -> "Rng":
        r = self.child(self._spawned)
        self._spawned += 1
        return r

    # thin wrappers so callers never touch the generator directly
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        """Uniform draws in ``[0, 1)`` as float64."""
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def get_state(self):
        return self.generator.bit_generator.state

    def set_state(self, state):
        self.generator.bit_generator.state = state
