"""Deterministic chunked trial execution, serial or multiprocess.

Every heavy estimator splits its trial budget into fixed-size chunks and
gives chunk i its own generator seeded by SeedSequence([master_seed, op_id,
i]).  The decomposition depends only on (trials, chunk_size), never on the
worker count, so results are byte-identical whether the chunks run in one
process or many.  Generator-based callers keep a single serial stream
instead; that path is reproducible for a fixed chunk size but cannot be
parallelized.
"""
from __future__ import annotations

import multiprocessing
import os
from typing import Any, Callable, Sequence

import numpy as np

WORKERS_ENV = "BRANCHFIELD_WORKERS"

# stable operation identifiers, part of every chunk's seed material
OP_IDS = {
    "survival": 1,
    "survival_profile": 2,
    "spine_pool": 3,
    "lattice_intensity_sum": 4,
    "continuum_intensity": 5,
    "stable_ratio": 6,
    "sample_na": 7,
    "lambda_field": 8,
    "laplace_mc": 9,
    "invariance": 10,
    "compat": 11,
    "heat_kernel": 12,
    "spine_pool_pilot": 13,
}


def resolve_workers(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def chunk_sizes(total: int, chunk: int) -> list[int]:
    if total <= 0:
        return []
    chunk = max(1, chunk)
    full, rem = divmod(total, chunk)
    return [chunk] * full + ([rem] if rem else [])


def chunk_stream(master_seed: int, op_id: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([master_seed, op_id, index])))


def _run_chunk(args: tuple) -> Any:
    fn, master_seed, op_id, index, size, extra = args
    rng = chunk_stream(master_seed, op_id, index)
    return fn(rng, size, *extra)


def map_chunks(fn: Callable, total: int, chunk: int,
               seed_or_rng, op_name: str,
               extra: Sequence = (),
               workers: int | None = None) -> list[Any]:
    """Run fn(rng, size, *extra) over the chunk decomposition of ``total``.

    With an integer seed the chunks get independent deterministic streams
    and may run in parallel processes; with a Generator they share it
    serially (and ``workers`` is ignored).  Partial results come back in
    chunk order either way.
    """
    sizes = chunk_sizes(total, chunk)
    if isinstance(seed_or_rng, (int, np.integer)):
        op_id = OP_IDS[op_name]
        seed = int(seed_or_rng)
        n_workers = resolve_workers(workers)
        args = [(fn, seed, op_id, i, size, tuple(extra))
                for i, size in enumerate(sizes)]
        if n_workers == 1 or len(sizes) <= 1:
            return [_run_chunk(a) for a in args]
        with multiprocessing.Pool(min(n_workers, len(sizes))) as pool:
            return pool.map(_run_chunk, args)
    rng = seed_or_rng
    return [fn(rng, size, *extra) for size in sizes]
