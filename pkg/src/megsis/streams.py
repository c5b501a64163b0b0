"""Random stream construction shared by every sampler."""

import numpy as np

__all__ = ["make_rng", "derive_worker_seed"]


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_worker_seed(master_seed: int, worker_index: int, n_workers: int) -> np.random.SeedSequence:
    """Seed for worker ``worker_index`` of a ``n_workers`` plan.

    A one-worker plan reuses the master seed, so it reproduces the
    sequential run exactly.  Otherwise each worker gets the SeedSequence
    child with spawn key ``(worker_index,)``; distinct keys give distinct,
    statistically independent streams.
    """
    if not 0 <= worker_index < n_workers:
        raise ValueError(f"worker index {worker_index} outside 0..{n_workers - 1}")
    if n_workers == 1:
        return np.random.SeedSequence(int(master_seed))
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(worker_index),))
