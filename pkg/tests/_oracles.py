"""Independent brute-force oracles: exhaustive path enumeration.

Everything here deliberately avoids the package's dynamic programs; the
only shared dependency is the model data itself.
"""

from __future__ import annotations

import numpy as np

PATH_BUDGET = 300_000


def enumerate_paths(chain, length: int | None = None):
    """All paths (M, L) with their probabilities (M,), by direct products."""
    length = (chain.horizon + 1) if length is None else length
    sizes = [chain.size(i) for i in range(length)]
    total = int(np.prod(sizes))
    assert total <= PATH_BUDGET, f"{total} paths exceed the oracle budget"
    paths = np.stack(np.unravel_index(np.arange(total), sizes), axis=1)
    probs = chain.initial[paths[:, 0]].astype(float)
    for j in range(length - 1):
        probs = probs * chain.kernels[j][paths[:, j], paths[:, j + 1]]
    return paths, probs


def path_sums(obs, paths: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(len(paths))
    for j in range(n):
        p, q = obs.pasts[j], obs.futures[j]
        cols = tuple(paths[:, i] for i in range(j - p, j + q + 1))
        out += obs.tables[j][cols]
    return out


def oracle_moments(chain, obs, n: int):
    need = n + max(obs.futures[:n])
    paths, probs = enumerate_paths(chain, need + 1)
    s = path_sums(obs, paths, n)
    mean = float(np.dot(probs, s))
    var = float(np.dot(probs, (s - mean) ** 2))
    third = float(np.dot(probs, (s - mean) ** 3))
    return mean, var, third


def oracle_char(chain, obs, ts, n: int) -> np.ndarray:
    need = n + max(obs.futures[:n])
    paths, probs = enumerate_paths(chain, need + 1)
    s = path_sums(obs, paths, n)
    ts = np.asarray(ts, dtype=float)
    return (probs[None, :] * np.exp(1j * ts[:, None] * s[None, :])).sum(axis=1)


def oracle_atoms(chain, obs, n: int, decimals: int = 9) -> dict:
    need = n + max(obs.futures[:n])
    paths, probs = enumerate_paths(chain, need + 1)
    s = np.round(path_sums(obs, paths, n), decimals)
    atoms: dict = {}
    for v, p in zip(s, probs):
        atoms[v] = atoms.get(v, 0.0) + p
    return atoms


def oracle_conditional_past(chain, j: int, g_table: np.ndarray) -> np.ndarray:
    """E[g(X_{j-width+1..j}) | X_{j+1} = x] by joint-law enumeration."""
    width = g_table.ndim
    paths, probs = enumerate_paths(chain, j + 2)
    cols = tuple(paths[:, i] for i in range(j - width + 1, j + 1))
    gvals = g_table[cols]
    out = np.zeros(chain.size(j + 1))
    mass = np.zeros(chain.size(j + 1))
    np.add.at(out, paths[:, j + 1], probs * gvals)
    np.add.at(mass, paths[:, j + 1], probs)
    return out / mass


def random_instance(rng: np.random.Generator, n_max: int = 12, s_max: int = 3,
                    window_max: int = 2, a: float | None = None):
    """Seeded random chain + one-sided observable, small enough to enumerate."""
    from markovllt.chain import ChainSpec
    from markovllt.observables import WindowObservable

    n = int(rng.integers(4, n_max + 1))
    sizes = [int(rng.integers(2, s_max + 1)) for _ in range(n + 1)]
    while int(np.prod(sizes)) > PATH_BUDGET:
        sizes = sizes[:-1]
        n -= 1
    kernels = []
    for j in range(n):
        raw = rng.random((sizes[j], sizes[j + 1])) + 0.2
        kernels.append(raw / raw.sum(axis=1, keepdims=True))
    init = rng.random(sizes[0]) + 0.2
    init /= init.sum()
    a = float(a if a is not None else rng.uniform(0.2, 0.8))
    chain = ChainSpec(tuple(tuple(range(s)) for s in sizes), tuple(kernels),
                      init, a)
    w = int(rng.integers(1, window_max + 1))
    m = n - (w - 1)
    tabs = tuple(rng.uniform(-1.0, 1.0, tuple(sizes[j:j + w])) for j in range(m))
    obs = WindowObservable(tabs, (0,) * m, (w - 1,) * m)
    return chain, obs
