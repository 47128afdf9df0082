"""Deterministic random substreams and block-parallel mapping.

Particles are split into fixed-size blocks. Every (purpose, step, block)
triple owns its own generator derived from the run seed through
``SeedSequence.spawn_key``, so the numbers a particle sees never depend on
how many worker threads run the blocks or in which order they finish.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 1024

# spawn-key tags; stable integers so streams survive refactors
INIT = 1
PREDICT = 2
RESAMPLE = 3
PARAMS = 4
OBSERVATIONS = 5
CELL = 6
BAND = 7
JITTER = 8
RATE = 9


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream addressed by ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def blocks(n: int, size: int = BLOCK_SIZE) -> list[slice]:
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]


class Streams:
    """Seed plus worker count; hands out per-block generators.

    Parameters
    ----------
    seed : int
        Root seed of the run.
    threads : int
        Number of worker threads used by :meth:`map_blocks`. Results do not
        depend on this value.
    """

    def __init__(self, seed: int = 0, threads: int = 1):
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.seed = int(seed)
        self.threads = int(threads)

    def rng(self, *key: int) -> np.random.Generator:
        return stream(self.seed, *key)

    def map_slices(self, fn, n: int) -> list:
        """Call ``fn(block_slice)`` for every particle block, results in block order."""
        parts = blocks(n)
        if self.threads == 1 or len(parts) == 1:
            return [fn(sl) for sl in parts]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, parts))

    def map_blocks(self, fn, n: int, *key: int) -> list:
        """Call ``fn(block_slice, rng)`` for every particle block.

        The generator handed to block ``b`` is ``stream(seed, *key, b)``.
        Results come back in block order.
        """
        jobs = [(sl, self.rng(*key, b)) for b, sl in enumerate(blocks(n))]
        if self.threads == 1 or len(jobs) == 1:
            return [fn(sl, g) for sl, g in jobs]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = [pool.submit(fn, sl, g) for sl, g in jobs]
            return [f.result() for f in futures]
