"""Iterated random functions driven by the chain, as window observables.

The recursion Y_k = G_k(Y_{k-1}, X_k) with uniformly contracting-in-y maps
defines, in the no-initial-condition mode, a process depending on the whole
past of the chain.  Freezing coordinates older than a window at the anchor
yields a finite-window observable with a certified geometric truncation
error, ready for the reduction and local-limit machinery.  Function
families are restricted to forms whose Lipschitz constants are exactly
computable: affine in y with state-dependent coefficients, or tabulated
piecewise-linear interpolants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from markovllt.chain import ChainSpec, ModelError
from markovllt.observables import WindowObservable, default_anchor


@dataclass(frozen=True)
class IrfFamily:
    """Per-step transformations G_k(y, x) with exactly auditable constants.

    Affine form: G_k(y, x) = coef_k(x) * y + intercept_k(x).
    Interpolant form: G_k(., x) is piecewise linear on a fixed y-grid.
    The invariant interval, when declared, must satisfy
    G_k([lo, hi], x) within [lo, hi] for every k and x.
    """

    kind: str  # "affine" | "interp"
    coefs: tuple[np.ndarray, ...]          # affine: per-step per-state slopes
    intercepts: tuple[np.ndarray, ...]     # affine: per-step per-state offsets
    y_grid: np.ndarray | None = None       # interp: shared knot grid
    tables: tuple[np.ndarray, ...] | None = None  # interp: values[k][state, knot]
    invariant: tuple[float, float] | None = None
    state_reg_constant: float | None = None  # recorded; inert on finite spaces

    def __post_init__(self):
        if self.kind not in ("affine", "interp"):
            raise ModelError("family kind must be 'affine' or 'interp'")
        if self.kind == "interp" and (self.y_grid is None or self.tables is None):
            raise ModelError("interpolant family needs a y grid and value tables")
        if self.invariant is not None:
            lo, hi = self.invariant
            if not lo < hi:
                raise ModelError("invariant interval must be nondegenerate")
            self._check_invariant()

    def steps(self) -> int:
        return len(self.coefs) if self.kind == "affine" else len(self.tables)

    def lipschitz(self, k: int) -> np.ndarray:
        """Exact per-state Lipschitz-in-y constants at step k."""
        if self.kind == "affine":
            return np.abs(self.coefs[k])
        slopes = np.diff(self.tables[k], axis=1) / np.diff(self.y_grid)[None, :]
        return np.abs(slopes).max(axis=1)

    @property
    def delta0(self) -> float:
        return max(float(self.lipschitz(k).max()) for k in range(self.steps()))

    def apply(self, k: int, y: np.ndarray, states: np.ndarray) -> np.ndarray:
        if self.kind == "affine":
            return self.coefs[k][states] * y + self.intercepts[k][states]
        out = np.empty_like(y, dtype=float)
        for s in np.unique(states):
            m = states == s
            out[m] = np.interp(y[m], self.y_grid, self.tables[k][s])
        return out

    def _check_invariant(self):
        lo, hi = self.invariant
        for k in range(self.steps()):
            if self.kind == "affine":
                ends = np.stack([self.coefs[k] * lo + self.intercepts[k],
                                 self.coefs[k] * hi + self.intercepts[k]])
                vmin, vmax = ends.min(), ends.max()
            else:
                inside = (self.y_grid >= lo) & (self.y_grid <= hi)
                pts = np.concatenate([[lo, hi], self.y_grid[inside]])
                vals = np.stack([np.interp(pts, self.y_grid, row)
                                 for row in self.tables[k]])
                vmin, vmax = vals.min(), vals.max()
            if vmin < lo - 1e-12 or vmax > hi + 1e-12:
                raise ModelError(f"step {k} maps the declared invariant interval "
                                 f"outside itself ([{vmin}, {vmax}])")

    @classmethod
    def homogeneous_affine(cls, coef_by_state: np.ndarray,
                           intercept_by_state: np.ndarray, n_steps: int,
                           invariant: tuple[float, float] | None = None,
                           state_reg_constant: float | None = None) -> "IrfFamily":
        c = np.asarray(coef_by_state, dtype=float)
        b = np.asarray(intercept_by_state, dtype=float)
        return cls("affine", tuple(c for _ in range(n_steps)),
                   tuple(b for _ in range(n_steps)), invariant=invariant,
                   state_reg_constant=state_reg_constant)


@dataclass(frozen=True)
class IrfTrajectories:
    y: np.ndarray               # (n_paths, n+1); y[:, k] = Y_k
    mode: str                   # "initial" | "no-initial"
    burn: int
    agreement_bound: float      # delta0**burn * diameter (no-initial mode)
    max_disagreement: float     # observed two-seed gap after the burn-in


def simulate_irf(family: IrfFamily, paths: np.ndarray, n: int,
                 y0: float | None = None, burn: int | None = None) -> IrfTrajectories:
    """Run the recursion along sampled chain paths.

    With y0 the recursion starts there; without it (the no-initial mode,
    requiring delta0 < 1) two runs start at the ends of the invariant
    interval and their post-burn-in agreement within delta0**burn * diameter
    is asserted.  Leaving the declared invariant interval is a hard failure:
    it falsifies the declared invariant-set data.
    """
    if n > family.steps() - 1:
        raise ModelError("n exceeds the family's step count")
    paths = np.atleast_2d(paths)
    if family.invariant is None and y0 is None:
        raise ModelError("no-initial mode needs a declared invariant interval")

    def run(start: float) -> np.ndarray:
        y = np.full(len(paths), float(start))
        out = np.empty((len(paths), n + 1))
        out[:, 0] = y
        for k in range(1, n + 1):
            y = family.apply(k, y, paths[:, k])
            out[:, k] = y
        return out

    if y0 is not None:
        traj = run(y0)
        mode, bound, gap, burn_used = "initial", 0.0, 0.0, 0
    else:
        d0 = family.delta0
        if d0 >= 1.0:
            raise ModelError(f"no-initial mode needs delta0 < 1 (got {d0})")
        lo, hi = family.invariant
        burn_used = burn if burn is not None else \
            max(1, math.ceil(math.log(1e-12) / math.log(d0)))
        ya, yb = run(lo), run(hi)
        bound = d0 ** burn_used * (hi - lo)
        tail = slice(burn_used, None)
        gap = float(np.abs(ya[:, tail] - yb[:, tail]).max()) if n >= burn_used else 0.0
        if gap > bound + 1e-12:
            raise ModelError(f"two-seed disagreement {gap:.3e} exceeds the "
                             f"contraction bound {bound:.3e}")
        traj = 0.5 * (ya + yb)
        mode = "no-initial"
    if family.invariant is not None:
        lo, hi = family.invariant
        if traj.min() < lo - 1e-9 or traj.max() > hi + 1e-9:
            raise ModelError("trajectory left the declared invariant interval; "
                             "the declared set data is falsified")
    return IrfTrajectories(traj, mode, burn_used, bound, gap)


def anchor_past_values(family: IrfFamily, chain: ChainSpec,
                       anchor: Sequence[int] | None = None) -> np.ndarray:
    """Value of the recursion run along the anchor path from the interval centre."""
    if anchor is None:
        anchor = default_anchor(chain)
    lo, hi = family.invariant if family.invariant is not None else (0.0, 0.0)
    v = np.empty(family.steps())
    y = np.array([0.5 * (lo + hi)])
    v[0] = y[0]
    for k in range(1, family.steps()):
        y = family.apply(k, y, np.array([anchor[k]]))
        v[k] = y[0]
    return v


def irf_window_observable(family: IrfFamily, chain: ChainSpec, window: int,
                          count: int | None = None,
                          anchor: Sequence[int] | None = None,
                          table_budget: int = 1 << 22,
                          tolerance: float | None = None
                          ) -> tuple[WindowObservable, float]:
    """Truncate the no-initial process to a finite window of coordinates.

    f_k(x_{k-window+1}, ..., x_k) restarts the recursion from the anchored
    past value at k-window; the certified sup error is
    diameter * delta0**window.  When a tolerance is requested and the bound
    misses it, the error names the window that would reach it.
    """
    d0 = family.delta0
    if d0 >= 1.0:
        raise ModelError(f"window observables need delta0 < 1 (got {d0})")
    if family.invariant is None:
        raise ModelError("window truncation needs a declared invariant interval")
    lo, hi = family.invariant
    diam = hi - lo
    bound = diam * d0 ** window
    if tolerance is not None and bound > tolerance:
        need = math.ceil(math.log(tolerance / diam) / math.log(d0))
        raise ModelError(f"window {window} gives bound {bound:.3e} > {tolerance}; "
                         f"need window >= {need}")
    if anchor is None:
        anchor = default_anchor(chain)
    v_anchor = anchor_past_values(family, chain, anchor)
    m = count if count is not None else min(family.steps() - 1, chain.horizon)
    tabs, pasts, futs = [], [], []
    total_cells = 0
    for k in range(m):
        w_eff = min(window, k + 1)  # windows clip at time zero
        sizes = tuple(chain.size(i) for i in range(k - w_eff + 1, k + 1))
        total_cells += int(np.prod(sizes))
        if total_cells > table_budget:
            raise ModelError(f"window tables exceed the cell budget "
                             f"({total_cells} > {table_budget}); use a smaller "
                             "window or evaluate on paths instead")
        configs = np.stack(np.unravel_index(np.arange(int(np.prod(sizes))), sizes),
                           axis=1)
        start = k - w_eff  # anchored value enters at this time index
        y = np.full(len(configs), v_anchor[start] if start >= 0 else v_anchor[0])
        for off in range(w_eff):
            y = family.apply(start + off + 1, y, configs[:, off])
        tabs.append(y.reshape(sizes))
        pasts.append(w_eff - 1)
        futs.append(0)
    obs = WindowObservable(tuple(tabs), tuple(pasts), tuple(futs))
    return obs, bound


def truncated_on_paths(family: IrfFamily, chain: ChainSpec, paths: np.ndarray,
                       k: int, window: int,
                       anchor: Sequence[int] | None = None) -> np.ndarray:
    """Evaluate the window-truncated f_k along given paths (vectorized)."""
    v_anchor = anchor_past_values(family, chain, anchor)
    w_eff = min(window, k + 1)
    start = k - w_eff
    y = np.full(len(paths), v_anchor[max(start, 0)])
    for off in range(w_eff):
        y = family.apply(start + off + 1, y, paths[:, start + off + 1])
    return y


def truncation_gap(family: IrfFamily, chain: ChainSpec, paths: np.ndarray,
                   k: int, window: int, ref_extra: int = 20,
                   anchor: Sequence[int] | None = None) -> float:
    """Observed gap between the window truncation and a deeper reference.

    Both restart from anchored past values, so the gap is bounded by
    diameter * delta0**window entrywise.
    """
    a = truncated_on_paths(family, chain, paths, k, window, anchor)
    b = truncated_on_paths(family, chain, paths, k, window + ref_extra, anchor)
    return float(np.abs(a - b).max())


def irf_sum_moments(family: IrfFamily, chain: ChainSpec, n: int,
                    burn: int = 0, y_init: float | None = None
                    ) -> tuple[float, float, float]:
    """Exact (mean, variance, third central moment) of S = sum of Y over
    the n steps following the burn-in.

    Tracks per-state conditional raw moments E[1{X_k=x} Y^a S^b] for
    a + b <= 3 through the affine recursion; exact up to float rounding.
    """
    if family.kind != "affine":
        raise ModelError("exact sum moments need the affine form")
    if burn + n > family.steps() - 1:
        raise ModelError("burn + n exceeds the family's step count")
    if y_init is None:
        if family.invariant is None:
            raise ModelError("need y_init or a declared invariant interval")
        y_init = 0.5 * (family.invariant[0] + family.invariant[1])
    idx = [(a, b) for a in range(4) for b in range(4) if a + b <= 3]
    pos = {ab: i for i, ab in enumerate(idx)}
    n_states = chain.size(0)
    t = np.zeros((len(idx), n_states))
    for (a, b), i in pos.items():
        t[i] = chain.initial * (y_init ** a) * (0.0 ** b if b else 1.0)
    from math import comb
    for k in range(1, burn + n + 1):
        counting = k > burn
        c = family.coefs[k]
        d = family.intercepts[k]
        p = chain.kernels[k - 1]
        sizes_next = p.shape[1]
        new = np.zeros((len(idx), sizes_next))
        # raw moments of (Y, S) at the previous step, per previous state
        for (a, b), i in pos.items():
            # Y' = c Y + d;  S' = S + Y' when counting, else S' = S
            # E[Y'^a S'^b] expands into E[Y^i S^j] with i + j <= a + b
            acc = np.zeros((n_states, sizes_next))
            if counting:
                for j in range(b + 1):
                    coef_j = comb(b, j)
                    e = a + b - j  # power of (cY + d)
                    for i2 in range(e + 1):
                        base = pos[(i2, j)]
                        term = comb(e, i2) * (c ** i2) * (d ** (e - i2))
                        acc += coef_j * t[base][:, None] * (p * term[None, :])
            else:
                for i2 in range(a + 1):
                    base = pos[(i2, b)]
                    term = comb(a, i2) * (c ** i2) * (d ** (a - i2))
                    acc += t[base][:, None] * (p * term[None, :])
            new[i] = acc.sum(axis=0)
        t = new
        n_states = sizes_next
    raw = {ab: float(t[pos[ab]].sum()) for ab in idx}
    mean = raw[(0, 1)]
    var = raw[(0, 2)] - mean ** 2
    third = raw[(0, 3)] - 3.0 * mean * raw[(0, 2)] + 2.0 * mean ** 3
    return mean, var, third


def lipschitz_audit(family: IrfFamily, seed: int = 0, samples: int = 256,
                    slack: float = 1e-9) -> float:
    """Sampled difference quotients in y must respect the declared constants."""
    rng = np.random.default_rng(seed)
    lo, hi = family.invariant if family.invariant is not None else (-1.0, 1.0)
    worst = 0.0
    for k in range(family.steps()):
        lips = family.lipschitz(k)
        n_states = len(lips)
        y1 = rng.uniform(lo, hi, samples)
        y2 = rng.uniform(lo, hi, samples)
        states = rng.integers(0, n_states, samples)
        g1 = family.apply(k, y1, states)
        g2 = family.apply(k, y2, states)
        ok = np.abs(y1 - y2) > 1e-12
        quot = np.abs(g1[ok] - g2[ok]) / np.abs(y1[ok] - y2[ok])
        excess = quot - lips[states[ok]]
        if excess.size:
            worst = max(worst, float(excess.max()))
        if worst > slack:
            raise ModelError(f"sampled Lipschitz quotient exceeds the declared "
                             f"constant by {worst:.3e} at step {k}")
    return worst
