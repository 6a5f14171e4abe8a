"""Window observables, their norms, and structural decompositions.

An observable sequence assigns to each time j a real table over a finite
window of coordinates (x_{j-p_j}, ..., x_{j+q_j}).  Partial sums of such
sequences are the objects whose local limit behaviour the rest of the
package verifies.  This module computes the dynamical-distance variation,
reduces two-sided sequences to one-sided ones plus a coboundary via an
anchor point, performs the martingale/coboundary decomposition through
future-conditioned expectations, and builds linear-process observables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from markovllt.chain import (
    ChainSpec,
    ModelError,
    backward_kernels,
    propagate_marginals,
    window_law,
)

INTEGER_TOL = 1e-12


@dataclass(frozen=True)
class WindowObservable:
    """Sequence of finite-window functions f_0..f_{m-1}.

    tables[j] has one axis per coordinate x_{j-pasts[j]} .. x_{j+futures[j]}.
    """

    tables: tuple[np.ndarray, ...]
    pasts: tuple[int, ...]
    futures: tuple[int, ...]

    def __post_init__(self):
        tables = tuple(np.asarray(t, dtype=float) for t in self.tables)
        for t in tables:
            t.setflags(write=False)
        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "pasts", tuple(int(p) for p in self.pasts))
        object.__setattr__(self, "futures", tuple(int(q) for q in self.futures))
        if not (len(self.tables) == len(self.pasts) == len(self.futures)):
            raise ModelError("tables/pasts/futures length mismatch")
        for j, (t, p, q) in enumerate(zip(tables, self.pasts, self.futures)):
            if p < 0 or q < 0:
                raise ModelError(f"negative window depth at index {j}")
            if t.ndim != p + q + 1:
                raise ModelError(f"table {j} has {t.ndim} axes, window needs {p + q + 1}")
            if p > j:
                raise ModelError(f"window at index {j} reaches below time 0")

    def __len__(self) -> int:
        return len(self.tables)

    @property
    def one_sided(self) -> bool:
        return all(p == 0 for p in self.pasts)

    @property
    def max_past(self) -> int:
        return max(self.pasts, default=0)

    @property
    def max_future(self) -> int:
        return max(self.futures, default=0)

    @property
    def sup_norm(self) -> float:
        return max(float(np.abs(t).max()) for t in self.tables)

    def integer_valued(self, tol: float = INTEGER_TOL) -> bool:
        return all(np.abs(t - np.round(t)).max() <= tol for t in self.tables)

    def step_offsets(self, tol: float = INTEGER_TOL) -> np.ndarray | None:
        """Per-step constants c_j with f_j - c_j integer valued, or None."""
        offs = []
        for t in self.tables:
            c = float(t.flat[0])
            if np.abs((t - c) - np.round(t - c)).max() > tol:
                return None
            offs.append(c)
        return np.array(offs)

    def check_horizon(self, chain: ChainSpec):
        if len(self) > chain.horizon:
            raise ModelError("more observables than chain steps")
        for j, (t, p, q) in enumerate(zip(self.tables, self.pasts, self.futures)):
            if j + q > chain.horizon:
                raise ModelError(f"window at index {j} reaches beyond the horizon")
            expect = tuple(chain.size(i) for i in range(j - p, j + q + 1))
            if t.shape != expect:
                raise ModelError(f"table {j} shape {t.shape} does not match "
                                 f"state spaces {expect}")

    def evaluate(self, j: int, paths: np.ndarray) -> np.ndarray:
        """Evaluate f_j on integer-coded paths of shape (..., N+1)."""
        p, q = self.pasts[j], self.futures[j]
        cols = tuple(paths[..., i] for i in range(j - p, j + q + 1))
        return self.tables[j][cols]

    def partial_sum(self, n: int, paths: np.ndarray) -> np.ndarray:
        out = np.zeros(paths.shape[:-1])
        for j in range(n):
            out += self.evaluate(j, paths)
        return out


@dataclass(frozen=True)
class NormData:
    sup_norm: float
    variation: float

    @property
    def combined(self) -> float:
        return self.sup_norm + self.variation


@dataclass(frozen=True)
class Decomposition:
    """Mean + reverse-martingale + coboundary split of an observable.

    f_j = means[j] + M_j + u_{j+1} o T_j - u_j pointwise up to residual_sup;
    the martingale part satisfies E[M_j | future beyond j] = 0.
    """

    means: np.ndarray
    martingale: WindowObservable
    transfer: WindowObservable
    residual_sup: float
    var_martingale: np.ndarray
    lattice_part: WindowObservable | None = None
    lattice_span: float | None = None

    @property
    def sum_var_martingale(self) -> float:
        return float(self.var_martingale.sum())


def variation(table: np.ndarray, a: float, past: int = 0) -> float:
    """Exact variation of one window table under the dynamical distance.

    Maximises |f(x) - f(y)| / a**k over window pairs, where k is the
    smallest |relative coordinate| at which x and y disagree (relative
    coordinate 0 is the observable's own time index).
    """
    t = np.asarray(table, dtype=float)
    m = t.size
    if m <= 1:
        return 0.0
    rel = np.abs(np.arange(t.ndim) - past)
    coords = np.stack(np.unravel_index(np.arange(m), t.shape), axis=1)
    flat = t.reshape(m)
    diff = coords[:, None, :] != coords[None, :, :]
    k = np.where(diff, rel[None, None, :], np.inf).min(axis=2)
    num = np.abs(flat[:, None] - flat[None, :])
    mask = np.isfinite(k)
    if not mask.any():
        return 0.0
    return float((num[mask] / a ** k[mask]).max())


def norm_data(obs: WindowObservable, a: float) -> NormData:
    """sup norm and worst variation across the sequence."""
    var = max(variation(t, a, p) for t, p in zip(obs.tables, obs.pasts))
    return NormData(sup_norm=obs.sup_norm, variation=var)


def default_anchor(chain: ChainSpec) -> tuple[int, ...]:
    """Designated point: the first listed state at each time index."""
    return tuple(0 for _ in chain.states)


def _aligned_sum(parts: Sequence[tuple[int, np.ndarray, float]],
                 chain: ChainSpec) -> tuple[int, np.ndarray]:
    """Sum window tables given as (start index, table, coefficient)."""
    lo = min(s for s, _, _ in parts)
    hi = max(s + t.ndim - 1 for s, t, _ in parts)
    shape = tuple(chain.size(i) for i in range(lo, hi + 1))
    out = np.zeros(shape)
    for s, t, c in parts:
        exp = [1] * len(shape)
        for ax in range(t.ndim):
            exp[s - lo + ax] = t.shape[ax]
        out += c * t.reshape(exp)
    return lo, out


def _frozen_slice(table: np.ndarray, n_frozen: int, anchor_idx: Sequence[int]) -> np.ndarray:
    """Fix the first n_frozen axes of a table at the given anchor states."""
    if n_frozen <= 0:
        return table
    return table[tuple(anchor_idx[:n_frozen])]


def sinai_reduce(obs: WindowObservable, chain: ChainSpec,
                 anchor: Sequence[int] | None = None,
                 tol: float = 1e-12) -> tuple[WindowObservable, WindowObservable]:
    """Split a two-sided sequence into a one-sided part plus a coboundary.

    Returns (u, g) with f_j = g_j + u_{j+1} o T_j - u_j exactly; g_j depends
    only on coordinates at or after j.  u_j sums the finitely many terms
    f_{j+k}(x) - f_{j+k}(anchor below j, x from j on) with k < p_{j+k};
    the series terminates because window pasts are bounded.
    """
    obs.check_horizon(chain)
    if anchor is None:
        anchor = default_anchor(chain)
    anchor = tuple(anchor)
    if len(anchor) < len(chain.states):
        raise ModelError("anchor must fix one state per time index")
    for i, ai in enumerate(anchor[: len(chain.states)]):
        if not 0 <= ai < chain.size(i):
            raise ModelError(f"anchor coordinate {ai} outside state space {i}")
    m = len(obs)

    def u_parts(j: int) -> list[tuple[int, np.ndarray, float]]:
        parts = []
        for k in range(0, m - j):
            jk = j + k
            p = obs.pasts[jk]
            if p <= k:
                continue  # f_{j+k} never reads below j
            t = obs.tables[jk]
            start = jk - p
            parts.append((start, t, 1.0))
            # freeze coordinates below j at the anchor
            frozen = _frozen_slice(t, j - start, anchor[start:j])
            parts.append((j, frozen, -1.0))
        return parts

    u_tabs, u_pasts, u_futs = [], [], []
    for j in range(m + 1):
        parts = u_parts(j)
        if not parts:
            lo, tab = j, np.zeros(tuple(chain.size(i) for i in (j,)))
            if j >= len(chain.states):
                lo, tab = j, np.zeros(1)  # beyond horizon: identically zero
        else:
            lo, tab = _aligned_sum(parts, chain)
        u_tabs.append((lo, tab))

    g_tabs = []
    for j in range(m):
        lo_u, t_u = u_tabs[j]
        lo_v, t_v = u_tabs[j + 1]
        parts = [(j - obs.pasts[j], obs.tables[j], 1.0), (lo_v, t_v, 1.0), (lo_u, t_u, -1.0)]
        lo, g = _aligned_sum(parts, chain)
        # drop axes below j after verifying g does not depend on them
        while lo < j:
            osc = g.max(axis=0) - g.min(axis=0)
            if osc.size and float(np.abs(osc).max()) > tol:
                raise ModelError(f"reduction at index {j} is not one-sided "
                                 f"(residual {float(np.abs(osc).max()):.3e})")
            g = g[0]
            lo += 1
        g_tabs.append(g)

    u_obs = WindowObservable(
        tuple(t for _, t in u_tabs[:m]),
        tuple(j - lo for j, (lo, _) in zip(range(m), u_tabs[:m])),
        tuple(lo + t.ndim - 1 - j for j, (lo, t) in zip(range(m), u_tabs[:m])),
    )
    g_obs = WindowObservable(
        tuple(g_tabs),
        tuple(0 for _ in g_tabs),
        tuple(t.ndim - 1 for t in g_tabs),
    )
    return u_obs, g_obs


def _condexp_step(bk_matrix: np.ndarray, table: np.ndarray) -> np.ndarray:
    """One backward-averaging step: a table on [lo, hi] becomes one on [lo+1, hi'].

    Integrates out the leading coordinate against the backward kernel rows
    indexed by the next coordinate.
    """
    if table.ndim == 1:
        return bk_matrix @ table
    return np.einsum("xb,bx...->x...", bk_matrix, table)


def _window_mean(chain: ChainSpec, lo: int, table: np.ndarray,
                 marginals: list[np.ndarray]) -> float:
    law = window_law(chain, lo, table.ndim, marginals)
    return float((law * table).sum())


def gordin_decomposition(chain: ChainSpec, obs: WindowObservable,
                         depth: int | None = None,
                         tol: float = 1e-10) -> Decomposition:
    """Reverse-martingale plus coboundary decomposition of a one-sided sequence.

    M_j = sum_{k<=j} (E[fbar_k | G_j] - E[fbar_k | G_{j+1}]) and
    u_j = sum_{k<j} E[fbar_k | G_j], with G_j the future sigma-algebra from
    time j on and fbar the per-step centred observable.  All conditional
    expectations are exact backward-kernel contractions; the k-sums may be
    truncated at the given depth (None keeps every term, which is exact).
    """
    if not obs.one_sided:
        raise ModelError("decomposition needs a one-sided observable")
    obs.check_horizon(chain)
    m = len(obs)
    if depth is not None and depth < 1:
        raise ModelError("truncation depth must be positive")
    if depth is not None and depth > m:
        raise ModelError(f"horizon too short for truncation depth {depth}")
    mus = propagate_marginals(chain, require_positive=True)
    bks = backward_kernels(chain)
    means = np.array([_window_mean(chain, j, obs.tables[j], mus) for j in range(m)])

    cur: dict[int, np.ndarray] = {}  # k -> E[fbar_k | G_j] as table on [j, ...]
    mart_parts: list[tuple[int, np.ndarray]] = []
    u_parts: list[tuple[int, np.ndarray]] = []
    for j in range(m + 1):
        if j < m:
            cur[j] = obs.tables[j] - means[j]
        if depth is not None:
            for k in list(cur):
                if k < j - depth:
                    del cur[k]
        u_here = [(j, tbl, 1.0) for k, tbl in cur.items() if k < j]
        if u_here:
            lo, tab = _aligned_sum(u_here, chain)
        else:
            lo, tab = j, np.zeros(chain.size(min(j, chain.horizon)))
        u_parts.append((lo, tab))
        if j == m:
            break
        nxt = {k: _condexp_step(bks[j].matrix, tbl) for k, tbl in cur.items()}
        terms = [(j, tbl, 1.0) for tbl in cur.values()]
        terms += [(j + 1, tbl, -1.0) for tbl in nxt.values()]
        mart_parts.append(_aligned_sum(terms, chain))
        cur = nxt

    martingale = WindowObservable(
        tuple(t for _, t in mart_parts),
        tuple(0 for _ in mart_parts),
        tuple(t.ndim - 1 for _, t in mart_parts),
    )
    transfer = WindowObservable(
        tuple(t for _, t in u_parts[:m]),
        tuple(0 for _ in u_parts[:m]),
        tuple(t.ndim - 1 for _, t in u_parts[:m]),
    )
    residual = 0.0
    for j in range(m):
        lo_n, t_n = u_parts[j + 1]
        parts = [
            (j, obs.tables[j] - means[j], 1.0),
            (j, mart_parts[j][1], -1.0),
            (lo_n, t_n, -1.0),
            (u_parts[j][0], u_parts[j][1], 1.0),
        ]
        _, res = _aligned_sum(parts, chain)
        residual = max(residual, float(np.abs(res).max()))
    var_m = np.array([
        _window_mean(chain, j, mart_parts[j][1] ** 2, mus)
        - _window_mean(chain, j, mart_parts[j][1], mus) ** 2
        for j in range(m)
    ])
    return Decomposition(means=means, martingale=martingale, transfer=transfer,
                         residual_sup=residual, var_martingale=var_m)


def reverse_martingale_defect(chain: ChainSpec, dec: Decomposition) -> float:
    """Largest |E[M_j | G_{j+1}]| over j; zero characterises the martingale part."""
    bks = backward_kernels(chain)
    worst = 0.0
    for j, t in enumerate(dec.martingale.tables):
        stepped = _condexp_step(bks[j].matrix, t)
        worst = max(worst, float(np.abs(stepped).max()))
    return worst


def default_truncation_depth(gamma_hat: float, tol: float = 1e-10) -> int:
    """Depth at which geometric decay at the fitted rate reaches tol."""
    if not 0.0 < gamma_hat < 1.0:
        return 1
    return max(1, math.ceil(math.log(tol) / math.log(gamma_hat)))


def anchor_coboundary(obs: WindowObservable, chain: ChainSpec,
                      k: int, anchor: Sequence[int] | None = None) -> tuple[int, np.ndarray]:
    """Coboundary correction H_k pinned to the anchor point.

    H_k(x) = S_k f(anchor_0..anchor_{k-1}, x) - S_k f(anchor); only summands
    whose window reaches index k survive, so the result is a finite window
    table starting at k (returned as (start, table)).
    """
    if not obs.one_sided:
        raise ModelError("anchor coboundaries are built from one-sided sequences")
    obs.check_horizon(chain)
    if anchor is None:
        anchor = default_anchor(chain)
    parts = []
    for mm in range(min(k, len(obs))):
        q = obs.futures[mm]
        if mm + q < k:
            continue  # window closes before k: the two terms cancel
        t = obs.tables[mm]
        frozen = _frozen_slice(t, k - mm, anchor[mm:k])
        const = float(t[tuple(anchor[mm:mm + q + 1])])
        parts.append((k, frozen - const, 1.0))
    if not parts:
        return k, np.zeros(chain.size(min(k, chain.horizon)))
    return _aligned_sum(parts, chain)


def _interval_anchor_coboundary(obs: WindowObservable, chain: ChainSpec,
                                j: int, ell: int,
                                anchor: Sequence[int]) -> tuple[int, np.ndarray]:
    """H over the block [j, j+ell): anchored partial sum minus its anchor value."""
    parts = []
    for mm in range(j, min(j + ell, len(obs))):
        q = obs.futures[mm]
        if mm + q < j + ell:
            continue
        t = obs.tables[mm]
        frozen = _frozen_slice(t, j + ell - mm, anchor[mm:j + ell])
        const = float(t[tuple(anchor[mm:mm + q + 1])])
        parts.append((j + ell, frozen - const, 1.0))
    if not parts:
        return j + ell, np.zeros(chain.size(min(j + ell, chain.horizon)))
    return _aligned_sum(parts, chain)


def anchor_residual_curve(obs: WindowObservable, chain: ChainSpec,
                          j: int, ells: Sequence[int],
                          anchor: Sequence[int] | None = None) -> list[float]:
    """Sup norms of the block-vs-global coboundary mismatch over a grid of ell.

    The mismatch compares increments of the block coboundaries H_{j,ell}
    against increments of the global ones H_k; it vanishes once ell clears
    every window width.
    """
    if anchor is None:
        anchor = default_anchor(chain)
    out = []
    for ell in ells:
        lo1, h_next = _interval_anchor_coboundary(obs, chain, j, ell + 1, anchor)
        lo2, h_cur = _interval_anchor_coboundary(obs, chain, j, ell, anchor)
        lo3, g_next = anchor_coboundary(obs, chain, j + ell + 1, anchor)
        lo4, g_cur = anchor_coboundary(obs, chain, j + ell, anchor)
        _, delta = _aligned_sum(
            [(lo1, h_next, 1.0), (lo2, h_cur, -1.0),
             (lo3, g_next, -1.0), (lo4, g_cur, 1.0)], chain)
        out.append(float(np.abs(delta).max()))
    return out


def build_linear_process(coeffs: Mapping[int, float],
                         base: Sequence[np.ndarray],
                         truncation: int,
                         chain: ChainSpec,
                         count: int | None = None) -> tuple[WindowObservable, float]:
    """Moving-average observable f_j = sum_{|k|<=K} a_k g_{j-k}(x_{j-k}).

    base[m] tabulates g_m over the m-th state space.  Windows clip at the
    horizon boundaries; the reported tail bound covers the discarded
    coefficients: sum_{|k|>K} |a_k| * max_m ||g_m||_inf.
    """
    n_spaces = len(chain.states)
    if len(base) != n_spaces:
        raise ModelError("need one base function per state space")
    if truncation < 0 or truncation > chain.horizon:
        raise ModelError("truncation exceeding horizon")
    gmax = max(float(np.abs(np.asarray(g)).max()) for g in base)
    tail = sum(abs(a) for k, a in coeffs.items() if abs(k) > truncation) * gmax
    m = count if count is not None else chain.horizon
    tabs, pasts, futs = [], [], []
    for j in range(m):
        p = min(truncation, j)
        q = min(truncation, n_spaces - 1 - j)
        shape = tuple(chain.size(i) for i in range(j - p, j + q + 1))
        tab = np.zeros(shape)
        for k, a in coeffs.items():
            if abs(k) > truncation:
                continue
            i = j - k
            if not 0 <= i < n_spaces or not (j - p <= i <= j + q):
                continue
            g = np.asarray(base[i], dtype=float)
            exp = [1] * len(shape)
            exp[i - (j - p)] = g.size
            tab += a * g.reshape(exp)
        tabs.append(tab)
        pasts.append(p)
        futs.append(q)
    return WindowObservable(tuple(tabs), tuple(pasts), tuple(futs)), tail


def future_truncation(chain: ChainSpec, obs: WindowObservable,
                      j: int, r: int) -> np.ndarray:
    """E[f_j | X_j..X_{j+r}] as a table over the truncated window.

    Integrates the window coordinates beyond j+r against the forward
    kernels; the sup distance to f_j is at most variation * a**r.
    """
    if not obs.one_sided:
        raise ModelError("future truncation applies to one-sided observables")
    q = obs.futures[j]
    t = np.array(obs.tables[j])
    while t.ndim - 1 > r:
        hi = j + t.ndim - 1
        t = np.einsum("...xy,xy->...x", t, chain.kernels[hi - 1])
    return t


def coordinate_observable(chain: ChainSpec, values: Sequence[np.ndarray] | None = None,
                          count: int | None = None,
                          scale: Sequence[float] | None = None) -> WindowObservable:
    """f_j(x) = value_j(x_j); by default the state label itself."""
    m = count if count is not None else chain.horizon
    tabs = []
    for j in range(m):
        if values is not None:
            v = np.asarray(values[j], dtype=float)
        else:
            v = np.array([float(s) for s in chain.states[j]])
        if scale is not None:
            v = v * scale[j]
        tabs.append(v)
    return WindowObservable(tuple(tabs), tuple(0 for _ in tabs), tuple(0 for _ in tabs))


def coboundary_observable(chain: ChainSpec, w: Sequence[np.ndarray],
                          count: int | None = None) -> WindowObservable:
    """f_j(x_j, x_{j+1}) = w_j(x_j) - w_{j+1}(x_{j+1}): a telescoping input."""
    m = count if count is not None else chain.horizon
    if len(w) < m + 1:
        raise ModelError("need m+1 potential tables for m coboundary steps")
    tabs = []
    for j in range(m):
        wj = np.asarray(w[j], dtype=float)
        wn = np.asarray(w[j + 1], dtype=float)
        tabs.append(wj[:, None] - wn[None, :])
    return WindowObservable(tuple(tabs), tuple(0 for _ in tabs), tuple(1 for _ in tabs))


def add_observables(a: WindowObservable, b: WindowObservable,
                    chain: ChainSpec) -> WindowObservable:
    """Pointwise sum, aligning windows per index."""
    if len(a) != len(b):
        raise ModelError("length mismatch")
    tabs, pasts, futs = [], [], []
    for j in range(len(a)):
        lo, t = _aligned_sum([
            (j - a.pasts[j], a.tables[j], 1.0),
            (j - b.pasts[j], b.tables[j], 1.0),
        ], chain)
        tabs.append(t)
        pasts.append(j - lo)
        futs.append(lo + t.ndim - 1 - j)
    return WindowObservable(tuple(tabs), tuple(pasts), tuple(futs))


def shift_observable(obs: WindowObservable, constants: Sequence[float]) -> WindowObservable:
    """f_j + c_j for per-step constants."""
    tabs = tuple(t + c for t, c in zip(obs.tables, constants))
    return WindowObservable(tabs, obs.pasts, obs.futures)
