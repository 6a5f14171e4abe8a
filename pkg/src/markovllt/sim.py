"""Seeded Monte Carlo sampling of chain paths and partial-sum statistics.

Streams are counter-based: sample index space is split into fixed-size
chunks and chunk k draws from a generator seeded with (master_seed, k).
The resulting multiset of samples is therefore identical for any worker
count, and merging is order-insensitive by construction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from markovllt.chain import ChainSpec, ModelError
from markovllt.observables import WindowObservable

CHUNK = 1 << 14
N_BATCHES = 32  # batch-means blocks for standard errors


@dataclass(frozen=True)
class SampleBatch:
    seed: int
    count: int
    chunk_size: int
    paths: np.ndarray  # (count, N+1) integer state codes

    def split_record(self) -> list[tuple[int, int]]:
        """(chunk index, chunk length) derivation record."""
        out = []
        for k in range(math.ceil(self.count / self.chunk_size)):
            out.append((k, min(self.chunk_size, self.count - k * self.chunk_size)))
        return out


def _sample_chunk(chain: ChainSpec, m: int, seed: int, k: int,
                  cum_init: np.ndarray, cums: list[np.ndarray]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, k)))
    n = chain.horizon
    paths = np.empty((m, n + 1), dtype=np.int64)
    u = rng.random(m)
    paths[:, 0] = np.searchsorted(cum_init, u, side="right")
    for j in range(n):
        u = rng.random(m)
        rows = cums[j][paths[:, j]]
        paths[:, j + 1] = (u[:, None] >= rows).sum(axis=1)
    return paths


def _chunk_plan(count: int) -> list[tuple[int, int]]:
    return [(k, min(CHUNK, count - k * CHUNK))
            for k in range(math.ceil(count / CHUNK))]


def sample_paths(chain: ChainSpec, count: int, seed: int,
                 threads: int = 1) -> SampleBatch:
    """Forward-sample full paths; reproducible across any thread count."""
    if count < 1:
        raise ModelError("need a positive sample count")
    cum_init = np.cumsum(chain.initial)
    cums = [np.cumsum(k, axis=1)[:, :-1] for k in chain.kernels]
    plan = _chunk_plan(count)
    if threads <= 1:
        parts = [_sample_chunk(chain, m, seed, k, cum_init, cums) for k, m in plan]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda km: _sample_chunk(chain, km[1], seed, km[0], cum_init, cums),
                plan))
    return SampleBatch(seed=seed, count=count, chunk_size=CHUNK,
                       paths=np.concatenate(parts, axis=0))


def observable_sums(chain: ChainSpec, obs: WindowObservable, n: int,
                    count: int, seed: int, threads: int = 1) -> np.ndarray:
    """Sampled values of S_n, streamed chunk by chunk to bound memory."""
    obs.check_horizon(chain)
    cum_init = np.cumsum(chain.initial)
    cums = [np.cumsum(k, axis=1)[:, :-1] for k in chain.kernels]
    plan = _chunk_plan(count)

    def work(km):
        k, m = km
        paths = _sample_chunk(chain, m, seed, k, cum_init, cums)
        return obs.partial_sum(n, paths)

    if threads <= 1:
        parts = [work(km) for km in plan]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, plan))
    return np.concatenate(parts)


@dataclass(frozen=True)
class LocalCountEstimates:
    u_grid: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    exact_match_freq: np.ndarray | None
    low_count_flags: np.ndarray


def _batch_se(values: np.ndarray) -> float:
    cut = (len(values) // N_BATCHES) * N_BATCHES
    bm = values[:cut].reshape(N_BATCHES, -1).mean(axis=1)
    return float(bm.std(ddof=1) / math.sqrt(N_BATCHES))


def empirical_local_counts(sums: np.ndarray, kernel, u_grid: np.ndarray,
                           integer_lattice: bool = False,
                           min_effective: float = 10.0) -> LocalCountEstimates:
    """Sample means of g(S_n - u) with batch-means standard errors.

    For lattice sums also reports exact-match frequencies P(S_n = u).
    Bins whose expected effective count falls below the floor are flagged
    rather than silently reported.
    """
    u_grid = np.asarray(u_grid, dtype=float)
    est = np.empty(len(u_grid))
    se = np.empty(len(u_grid))
    flags = np.zeros(len(u_grid), dtype=bool)
    for i, u in enumerate(u_grid):
        vals = kernel(sums - u)
        est[i] = vals.mean()
        se[i] = _batch_se(vals)
        flags[i] = (vals != 0.0).sum() < min_effective
    match = None
    if integer_lattice:
        match = np.array([(np.abs(sums - u) < 1e-9).mean() for u in u_grid])
    return LocalCountEstimates(u_grid, est, se, match, flags)
