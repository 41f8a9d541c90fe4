"""Seeded Gaussian increment streams.

Stream layout is pinned so that other implementations can reproduce it:

* trajectory ``i`` of master seed ``s`` draws from
  ``numpy.random.Generator(PCG64(SeedSequence(s, spawn_key=(i,))))``;
  a single run with seed ``s`` is trajectory 0;
* increments are ``Generator.standard_normal`` variates consumed in order,
  one per integration step (blocks of any size yield the same sequence).
"""

from __future__ import annotations

import numpy as np

BLOCK = 4096


def make_generator(seed: int, index: int = 0) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,)))
    )


class NoiseStream:
    """Standard normal draws for one trajectory, buffered in blocks."""

    def __init__(self, seed: int, index: int = 0, block: int = BLOCK):
        self.seed = seed
        self.index = index
        self.counter = 0
        self._gen = make_generator(seed, index)
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0

    def normal(self) -> float:
        if self._pos >= self._buf.size:
            self._buf = self._gen.standard_normal(self._block)
            self._pos = 0
        z = float(self._buf[self._pos])
        self._pos += 1
        self.counter += 1
        return z


class EnsembleNoise:
    """One independent stream per trajectory, read in lockstep.

    Row ``i`` of every draw comes from :class:`NoiseStream` ``(seed, i)``, so an
    ensemble member sees exactly the increments of the matching single run.
    """

    def __init__(self, master_seed: int, n: int, block: int = BLOCK):
        if n < 1:
            raise ValueError("ensemble needs at least one trajectory")
        self.seed = master_seed
        self.n = n
        self.counter = 0
        self._gens = [make_generator(master_seed, i) for i in range(n)]
        self._block = block
        self._buf = np.empty((n, 0))
        self._pos = 0

    def normal(self) -> np.ndarray:
        if self._pos >= self._buf.shape[1]:
            self._buf = np.stack([g.standard_normal(self._block) for g in self._gens])
            self._pos = 0
        z = self._buf[:, self._pos]
        self._pos += 1
        self.counter += 1
        return z


class SilentNoise:
    """Zero increments; gives the noise-averaged (deterministic) evolution."""

    counter = 0

    def normal(self) -> float:
        return 0.0
