"""Backward transfer-operator cocycles and sequential Perron-Frobenius data.

The one-step operator at time j averages the past coordinate against the
backward kernel; its twist multiplies by exp(z * f_j) first.  On finite
windows every operator is a small complex matrix mapping functions on
V_j = X_j x ... x X_{j+W-1} to functions on V_{j+1}, so compositions,
norms, eigendata and contraction certificates are all exactly computable.

Norm conventions: ||g||_{j} = sup + variation (dynamical distance weight a),
and the scaled norm ||g||_* = max(sup, variation / (2 C1)) built from the
Lasota-Yorke constant C1.  Certified upper bounds on twisted cocycle norms
combine the exact row-l1 bound of the composed matrix (sound for the sup
part) with the Lasota-Yorke recursion (sound for the variation part).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from markovllt.chain import (
    ChainSpec,
    ModelError,
    backward_kernels,
    propagate_marginals,
    window_law,
)
from markovllt.observables import WindowObservable, norm_data


class NormalizationCollapse(ModelError):
    """Per-step normaliser nearly vanished; retry with smaller |z|."""


def working_width(obs: WindowObservable) -> int:
    """Width of the window spaces the cocycle matrices act on.

    The domain window must contain every observable window, so the twist
    multiplier is a function of the domain coordinates alone.
    """
    return obs.max_future + 1


def _window_sizes(chain: ChainSpec, j: int, width: int) -> tuple[int, ...]:
    return tuple(chain.size(i) for i in range(j, j + width))


def _lift_flat(obs: WindowObservable, chain: ChainSpec, j: int, width: int) -> np.ndarray:
    """f_j as a flat vector over V_j (cylindrical extension to width W)."""
    sizes = _window_sizes(chain, j, width)
    t = obs.tables[j]
    exp = list(t.shape) + [1] * (width - t.ndim)
    return np.broadcast_to(t.reshape(exp), sizes).reshape(-1)


@dataclass(frozen=True)
class CocycleFactors:
    """Frequency-independent structure of the twisted cocycle.

    structures[j][v', u] carries the backward probability and the window
    overlap constraint; the twist only multiplies column u by exp(z f_j(u)).
    """

    chain: ChainSpec
    obs: WindowObservable
    width: int
    structures: tuple[np.ndarray, ...]
    f_flat: tuple[np.ndarray, ...]

    @property
    def max_steps(self) -> int:
        return len(self.structures)

    def domain_sizes(self, j: int) -> tuple[int, ...]:
        return _window_sizes(self.chain, j, self.width)

    def matrices(self, z: complex) -> list[np.ndarray]:
        return [s * np.exp(z * f)[None, :] for s, f in zip(self.structures, self.f_flat)]

    def matrix(self, j: int, z: complex) -> np.ndarray:
        return self.structures[j] * np.exp(z * self.f_flat[j])[None, :]


def cocycle_factors(chain: ChainSpec, obs: WindowObservable) -> CocycleFactors:
    if not obs.one_sided:
        raise ModelError("cocycle needs a one-sided observable; reduce it first")
    obs.check_horizon(chain)
    w = working_width(obs)
    steps = min(len(obs), chain.horizon - w + 1)
    if steps < 1:
        raise ModelError("horizon too short for the working window width")
    bks = backward_kernels(chain)
    structures = []
    f_flats = []
    for j in range(steps):
        dom = _window_sizes(chain, j, w)
        ran = _window_sizes(chain, j + 1, w)
        nd, nr = int(np.prod(dom)), int(np.prod(ran))
        s = np.zeros((nr, nd))
        bmat = bks[j].matrix
        if w == 1:
            s = np.array(bmat)
        else:
            overlap = dom[1:]
            n_ov = int(np.prod(overlap))
            sy = ran[-1]
            sb = dom[0]
            block = np.zeros((n_ov, sy, sb, n_ov))
            idx = np.arange(n_ov)
            first = idx // int(np.prod(overlap[1:])) if len(overlap) > 1 else idx
            # (T h)(c, y) = sum_b B_j[c_0, b] exp(z f_j(b, c)) h(b, c)
            block[idx, :, :, idx] = bmat[first][:, None, :]
            s = block.reshape(nr, nd)
        structures.append(s)
        f_flats.append(_lift_flat(obs, chain, j, w))
    return CocycleFactors(chain, obs, w, tuple(structures), tuple(f_flats))


@dataclass(frozen=True)
class TwistedCocycle:
    """Matrices of the twisted cocycle at a fixed complex parameter.

    For frequency t use z = i t; at z = 0 each matrix preserves constants.
    """

    factors: CocycleFactors
    z: complex

    @cached_property
    def mats(self) -> tuple[np.ndarray, ...]:
        return tuple(self.factors.matrices(self.z))

    @property
    def chain(self) -> ChainSpec:
        return self.factors.chain

    @property
    def width(self) -> int:
        return self.factors.width

    @property
    def max_steps(self) -> int:
        return self.factors.max_steps


def build_twisted(chain: ChainSpec, obs: WindowObservable, t: float) -> TwistedCocycle:
    """Cocycle of exp(i t f_j)-twisted backward-averaging operators."""
    return TwistedCocycle(cocycle_factors(chain, obs), 1j * t)


def build_complex(chain: ChainSpec, obs: WindowObservable, z: complex) -> TwistedCocycle:
    return TwistedCocycle(cocycle_factors(chain, obs), z)


def compose(cocycle: TwistedCocycle, j: int, n: int) -> np.ndarray:
    """Ordered product over the time interval [j, j+n); n = 0 is the identity."""
    if n < 0 or j < 0 or j + n > cocycle.max_steps:
        raise ModelError(f"interval [{j}, {j + n}) outside the cocycle range")
    dim = int(np.prod(cocycle.factors.domain_sizes(j)))
    out = np.eye(dim, dtype=complex)
    for step in range(j, j + n):
        out = cocycle.mats[step] @ out
    return out


def char_via_cocycle(cocycle: TwistedCocycle, n: int) -> complex:
    """E[exp(z S_n)] = terminal window law applied to the composed cocycle at 1."""
    w = cocycle.width
    v = np.ones(int(np.prod(cocycle.factors.domain_sizes(0))), dtype=complex)
    for step in range(n):
        v = cocycle.mats[step] @ v
    law = window_law(cocycle.chain, n, w).reshape(-1)
    return complex(law @ v)


def window_variation(values: np.ndarray, sizes: Sequence[int], a: float) -> float:
    """Variation of a (possibly complex) flat window function, one-sided weights."""
    m = int(np.prod(sizes))
    if m <= 1:
        return 0.0
    v = np.asarray(values).reshape(m)
    coords = np.stack(np.unravel_index(np.arange(m), tuple(sizes)), axis=1)
    rel = np.arange(len(sizes))
    diff = coords[:, None, :] != coords[None, :, :]
    k = np.where(diff, rel[None, None, :], np.inf).min(axis=2)
    num = np.abs(v[:, None] - v[None, :])
    mask = np.isfinite(k)
    if not mask.any():
        return 0.0
    return float((num[mask] / a ** k[mask]).max())


def window_norm(values: np.ndarray, sizes: Sequence[int], a: float) -> float:
    """sup + variation norm of a flat window function."""
    return float(np.abs(values).max()) + window_variation(values, sizes, a)


@dataclass(frozen=True)
class StarNormParams:
    """Constants of the scaled norm max(sup, variation/(2 C1)).

    C1 = 1 + delta + t_max * v_f * a/(1-a) is the provable Lasota-Yorke
    constant for frequencies |t| <= t_max; k0 is the shortest composition
    length whose scaled operator norm is certified to be at most 1.
    """

    c1: float
    k0: int
    a: float
    t_max: float
    delta: float
    v_f: float

    def star(self, values: np.ndarray, sizes: Sequence[int]) -> float:
        sup = float(np.abs(values).max())
        return max(sup, window_variation(values, sizes, self.a) / (2.0 * self.c1))

    def variation_part(self, length: int) -> float:
        """Certified bound on the variation/(2 C1) component after `length` steps."""
        return (self.c1 - 1.0) / (2.0 * self.c1) + self.a ** length


def star_params(chain: ChainSpec, obs: WindowObservable, t_max: float = 8.0,
                delta: float | None = None) -> StarNormParams:
    if delta is None:
        from markovllt.chain import validate_assumptions
        delta = validate_assumptions(chain).delta
    nd = norm_data(obs, chain.a)
    c_f = nd.variation * chain.a / (1.0 - chain.a)
    c1 = 1.0 + delta + t_max * c_f
    k0 = max(1, math.ceil(math.log(2.0 * c1) / math.log(1.0 / chain.a)))
    return StarNormParams(c1=c1, k0=k0, a=chain.a, t_max=t_max, delta=delta,
                          v_f=nd.variation)


@dataclass(frozen=True)
class RpfDecay:
    ns: tuple[int, ...]
    curve: tuple[float, ...]
    gamma_hat: float
    c_hat: float
    ceiling: float  # per-step contraction bound delta + a


def fit_geometric(ns: Sequence[int], values: Sequence[float],
                  floor: float | None = None) -> tuple[float, float]:
    """Least-squares geometric fit value ~ C * rate**n with C chosen to dominate."""
    ns = np.asarray(ns, dtype=float)
    vals = np.asarray(values, dtype=float)
    if floor is None:
        scale = vals.max(initial=0.0)
        floor = max(1e-13, 1e-12 * scale)
    mask = vals > floor
    if mask.sum() < 2:
        rate = 0.0
    else:
        slope, _ = np.polyfit(ns[mask], np.log(vals[mask]), 1)
        rate = float(np.exp(slope))
    if rate <= 0.0:
        c = float(vals.max(initial=0.0))
    else:
        c = float(np.max(vals / rate ** ns)) if len(vals) else 0.0
    return c, rate


def rpf_decay(chain: ChainSpec, g_table: np.ndarray, j: int, n_max: int,
              delta: float | None = None) -> RpfDecay:
    """Decay of the untwisted cocycle towards the averaging functional.

    Tracks ||L_j^n g - kappa_j(g)||_{j+n} exactly for a window table g
    rooted at time j, fits a geometric envelope, and reports the provable
    per-step ceiling delta + a for the variation contraction.
    """
    from markovllt.observables import _condexp_step  # shared exact step

    if delta is None:
        from markovllt.chain import validate_assumptions
        delta = validate_assumptions(chain).delta
    mus = propagate_marginals(chain, require_positive=True)
    bks = backward_kernels(chain)
    law = window_law(chain, j, g_table.ndim, mus)
    kappa = float((law * g_table).sum())
    cur = np.array(g_table, dtype=float)
    lo = j
    ns, curve = [], []
    for n in range(1, n_max + 1):
        if lo >= chain.horizon:
            break
        cur = _condexp_step(bks[lo].matrix, cur)
        lo += 1
        sizes = _window_sizes(chain, lo, cur.ndim)
        curve.append(window_norm(cur - kappa, sizes, chain.a))
        ns.append(n)
    c_hat, gamma_hat = fit_geometric(ns, curve)
    return RpfDecay(tuple(ns), tuple(curve), gamma_hat, c_hat, delta + chain.a)


@dataclass(frozen=True)
class RpfTriple:
    """Sequential eigendata (lambda_j, h_j, kappa_j) of a complex cocycle.

    h comes from forward iteration of 1 with per-step normalisation
    kappa_{j+1}(h_{j+1}) = 1; kappa from adjoint iteration seeded with the
    exact terminal window law and normalised to kappa_j(1) = 1.  lambda_j
    is the forward normalisation ratio, so prod_{k<n} lambda_k equals
    E[exp(z S_n)] exactly at n = len(lambdas).

    The residual profile quantifies boundary forgetting: a second triple is
    grown from deliberately different boundary seeds, and
    residual[j] = ||L_j h_j - lambda'_j h'_{j+1}||_inf mixes the two
    families.  It decays geometrically away from both boundaries exactly
    when the eigendata is insensitive to the seeding.
    """

    z: complex
    lambdas: np.ndarray
    adjoint_lambdas: np.ndarray
    h: tuple[np.ndarray, ...]
    kappa: tuple[np.ndarray, ...]
    residual_profile: np.ndarray
    width: int

    def log_lambda_prod(self, n: int | None = None) -> complex:
        n = len(self.lambdas) if n is None else n
        return complex(np.sum(np.log(self.lambdas[:n])))

    def interior_residual(self, burn_in: int) -> float:
        r = self.residual_profile
        if 2 * burn_in >= len(r):
            raise ModelError("horizon too short for the requested burn-in")
        return float(r[burn_in:len(r) - burn_in].max())


def _adjoint_pass(mats, seed: np.ndarray, collapse_tol: float):
    steps = len(mats)
    kappas: list[np.ndarray] = [None] * (steps + 1)  # type: ignore[list-item]
    kappas[steps] = seed.astype(complex) / seed.sum()
    d = np.zeros(steps, dtype=complex)
    for j in range(steps - 1, -1, -1):
        row = kappas[j + 1] @ mats[j]
        d[j] = row.sum()
        if abs(d[j]) < collapse_tol:
            raise NormalizationCollapse(
                f"adjoint normaliser vanished at step {j}; use smaller |z|")
        kappas[j] = row / d[j]
    return kappas, d


def _forward_pass(mats, kappas, seed: np.ndarray, collapse_tol: float):
    hs: list[np.ndarray] = [seed.astype(complex)]
    c = np.zeros(len(mats), dtype=complex)
    for j in range(len(mats)):
        v = mats[j] @ hs[j]
        c[j] = kappas[j + 1] @ v
        if abs(c[j]) < collapse_tol:
            raise NormalizationCollapse(
                f"forward normaliser vanished at step {j}; use smaller |z|")
        hs.append(v / c[j])
    return hs, c


def complex_rpf(chain: ChainSpec, obs: WindowObservable, z: complex,
                collapse_tol: float = 1e-12) -> RpfTriple:
    """Forward/adjoint construction of the sequential eigendata at parameter z."""
    cocycle = build_complex(chain, obs, z)
    mats = cocycle.mats
    steps = len(mats)
    mus = propagate_marginals(chain, require_positive=True)
    w = cocycle.width
    dim0 = mats[0].shape[1]
    dim_end = mats[-1].shape[0]

    terminal_law = window_law(chain, steps, w, mus).reshape(-1)
    kappas, d = _adjoint_pass(mats, terminal_law, collapse_tol)
    hs, c = _forward_pass(mats, kappas, np.ones(dim0), collapse_tol)

    # alternate seeds for the forgetting diagnostic
    kappas_b, d_b = _adjoint_pass(mats, np.ones(dim_end) / dim_end, collapse_tol)
    seed_b = np.ones(dim0)
    seed_b[0] += 0.5
    hs_b, _ = _forward_pass(mats, kappas_b, seed_b, collapse_tol)

    residual = np.array([
        float(np.abs(mats[j] @ hs[j] - d_b[j] * hs_b[j + 1]).max())
        for j in range(steps)
    ])
    return RpfTriple(z=z, lambdas=c, adjoint_lambdas=d, h=tuple(hs),
                     kappa=tuple(kappas), residual_profile=residual, width=w)


def log_moment_derivative(chain: ChainSpec, obs: WindowObservable,
                          n: int | None = None, h: float = 1e-4) -> float:
    """Central finite difference of log prod lambda_k(z) at z = 0.

    Matches E[S_n] because the forward normalisation ties the lambda
    product to the moment generating function exactly.
    """
    plus = complex_rpf(chain, obs, h).log_lambda_prod(n).real
    minus = complex_rpf(chain, obs, -h).log_lambda_prod(n).real
    return (plus - minus) / (2.0 * h)


@dataclass(frozen=True)
class LasotaYorkeReport:
    c1_certified: float
    c1_fitted: float
    sup_contraction_ok: bool
    inequality_ok: bool
    worst_ratio: float


def lasota_yorke_check(chain: ChainSpec, obs: WindowObservable,
                       h_values: np.ndarray, j: int,
                       ns: Sequence[int], t_grid: Sequence[float],
                       params: StarNormParams | None = None) -> LasotaYorkeReport:
    """Exact two-sided check of the norm inequality for a given test function.

    For every (t, n) on the grid, computes ||L_{j,t}^n h|| and compares with
    C1 (||h||_inf + a^n var(h)); also verifies the sup norm never expands.
    """
    if params is None:
        params = star_params(chain, obs, t_max=max(abs(t) for t in t_grid))
    factors = cocycle_factors(chain, obs)
    w = factors.width
    sizes0 = factors.domain_sizes(j)
    h0 = np.asarray(h_values, dtype=complex).reshape(-1)
    sup0 = float(np.abs(h0).max())
    var0 = window_variation(h0, sizes0, chain.a)
    worst = 0.0
    sup_ok = True
    for t in t_grid:
        if abs(t) > params.t_max + 1e-12:
            raise ModelError("frequency outside the certified range")
        mats = [factors.matrix(k, 1j * t) for k in range(factors.max_steps)]
        v = h0
        for n in range(1, max(ns) + 1):
            if j + n > factors.max_steps:
                break
            v = mats[j + n - 1] @ v
            if n in ns:
                sizes = factors.domain_sizes(j + n)
                lhs = window_norm(v, sizes, chain.a)
                rhs = sup0 + chain.a ** n * var0
                worst = max(worst, lhs / rhs if rhs > 0 else 0.0)
                if float(np.abs(v).max()) > sup0 + 1e-12:
                    sup_ok = False
    return LasotaYorkeReport(
        c1_certified=params.c1,
        c1_fitted=worst,
        sup_contraction_ok=sup_ok,
        inequality_ok=worst <= params.c1 + 1e-9,
        worst_ratio=worst,
    )


def _row_l1(mat: np.ndarray) -> float:
    return float(np.abs(mat).sum(axis=1).max())


def certified_upper(cocycle: TwistedCocycle, j: int, n: int,
                    params: StarNormParams,
                    block_len: int | None = None) -> float:
    """Sound upper bound for the scaled operator norm over [j, j+n).

    Combines the exact row-l1 bound of the composed matrix, the
    Lasota-Yorke variation recursion, block-wise submultiplicative
    refinement and the length-k0 cap at 1.
    """
    if n == 0:
        return 1.0
    if block_len is None:
        block_len = params.k0 + 4
    mats = cocycle.mats
    full = np.eye(mats[j].shape[1], dtype=complex)
    tail = full
    cum = 1.0
    tail_len = 0
    best = math.inf
    for step in range(j, j + n):
        full = mats[step] @ full
        tail = mats[step] @ tail
        tail_len += 1
        if tail_len == block_len:
            cum *= max(_row_l1(tail), params.variation_part(block_len))
            tail = np.eye(tail.shape[0], dtype=complex)
            tail_len = 0
    direct = max(_row_l1(full), params.variation_part(n))
    tail_factor = 1.0 if tail_len == 0 else max(_row_l1(tail), params.variation_part(tail_len))
    best = min(direct, cum * tail_factor)
    if n >= params.k0:
        best = min(best, 1.0)
    return best


def upper_curve(factors: CocycleFactors, ts: np.ndarray, n_grid: Sequence[int],
                params: StarNormParams,
                block_len: int | None = None) -> np.ndarray:
    """certified_upper vectorised over a frequency grid; shape (len(n_grid), len(ts))."""
    ts = np.asarray(ts, dtype=float)
    if block_len is None:
        block_len = params.k0 + 4
    n_max = max(n_grid)
    if n_max > factors.max_steps:
        raise ModelError("n_grid exceeds the cocycle range")
    dim0 = int(np.prod(factors.domain_sizes(0)))
    nt = len(ts)
    full = np.broadcast_to(np.eye(dim0, dtype=complex), (nt, dim0, dim0)).copy()
    tail = full.copy()
    cum = np.ones(nt)
    tail_len = 0
    out = np.ones((len(n_grid), nt))
    lookup = {n: i for i, n in enumerate(n_grid)}
    for step in range(n_max):
        phases = np.exp(1j * np.outer(ts, factors.f_flat[step]))
        s = factors.structures[step]
        full = np.einsum("vu,tuw->tvw", s, phases[:, :, None] * full)
        tail = np.einsum("vu,tuw->tvw", s, phases[:, :, None] * tail)
        tail_len += 1
        if tail_len == block_len:
            blk = np.maximum(np.abs(tail).sum(axis=2).max(axis=1),
                             params.variation_part(block_len))
            cum *= blk
            dim = tail.shape[1]
            tail = np.broadcast_to(np.eye(dim, dtype=complex), (nt, dim, dim)).copy()
            tail_len = 0
        n = step + 1
        if n in lookup:
            direct = np.maximum(np.abs(full).sum(axis=2).max(axis=1),
                                params.variation_part(n))
            if tail_len == 0:
                tail_factor = np.ones(nt)
            else:
                tail_factor = np.maximum(np.abs(tail).sum(axis=2).max(axis=1),
                                         params.variation_part(tail_len))
            vals = np.minimum(direct, cum * tail_factor)
            if n >= params.k0:
                vals = np.minimum(vals, 1.0)
            out[lookup[n]] = vals
    return out


@dataclass(frozen=True)
class NormSandwich:
    lower: float
    upper: float
    n_samples: int
    seed: int


def _sample_star_ball(rng: np.random.Generator, sizes: Sequence[int],
                      params: StarNormParams) -> np.ndarray:
    m = int(np.prod(sizes))
    h = np.exp(2j * np.pi * rng.random(m))
    v = window_variation(h, sizes, params.a)
    lam = 1.0 if v <= 2.0 * params.c1 else 2.0 * params.c1 / v
    return (1.0 - lam) + lam * h


def norm_estimate(cocycle: TwistedCocycle, j: int, n: int,
                  params: StarNormParams, samples: int = 32,
                  seed: int = 0) -> NormSandwich:
    """Certified sandwich around the scaled operator norm of [j, j+n).

    The lower bound maximises ||L h||_*/||h||_* over the constant function
    and seeded random-phase test functions from the unit ball; the upper
    bound is `certified_upper`.  Both sides bracket the true norm.
    """
    mat = compose(cocycle, j, n)
    dom = cocycle.factors.domain_sizes(j)
    ran = cocycle.factors.domain_sizes(j + n)
    upper = certified_upper(cocycle, j, n, params)
    rng = np.random.default_rng(np.random.SeedSequence((seed, j, n)))
    lower = 0.0
    cands = [np.ones(int(np.prod(dom)), dtype=complex)]
    cands += [_sample_star_ball(rng, dom, params) for _ in range(samples)]
    for h in cands:
        denom = params.star(h, dom)
        if denom <= 0.0:
            continue
        lower = max(lower, params.star(mat @ h, ran) / denom)
    if lower > upper + 1e-9:
        raise ModelError(f"norm sandwich inverted: lower {lower} > upper {upper}")
    return NormSandwich(lower=min(lower, upper), upper=upper,
                        n_samples=samples, seed=seed)


@dataclass(frozen=True)
class BlockDecomposition:
    """Greedy packing of frequency-uniform contracting blocks."""

    contracting: tuple[tuple[int, int], ...]
    complements: tuple[tuple[int, int], ...]
    count: int
    theta: float
    k0: int
    certificates: tuple[float, ...]


def _interval_upper(factors: CocycleFactors, ts: np.ndarray, lo: int, hi: int,
                    params: StarNormParams, lip_margin: float) -> float:
    """sup over the frequency interval of the direct upper bound on [lo, hi)."""
    dim = int(np.prod(factors.domain_sizes(lo)))
    nt = len(ts)
    prod = np.broadcast_to(np.eye(dim, dtype=complex), (nt, dim, dim)).copy()
    for step in range(lo, hi):
        phases = np.exp(1j * np.outer(ts, factors.f_flat[step]))
        prod = np.einsum("vu,tuw->tvw", factors.structures[step],
                         phases[:, :, None] * prod)
    row = np.abs(prod).sum(axis=2).max(axis=1)
    sup_part = float(row.max()) + lip_margin * (hi - lo)
    return max(sup_part, params.variation_part(hi - lo))


def contracting_blocks(chain: ChainSpec, obs: WindowObservable,
                       freq_interval: tuple[float, float], n: int,
                       block_range: tuple[int, int] | None = None,
                       theta: float = 0.05,
                       params: StarNormParams | None = None,
                       freq_step: float = 1e-2) -> BlockDecomposition:
    """Maximal greedy packing of contracting blocks over a frequency interval.

    A block [s, e) is declared contracting only when its certified upper
    bound, uniform over the interval (grid evaluation plus a Lipschitz
    margin of step/2 * length * ||f||_inf per step), is at most 1 - theta.
    Accepted blocks are separated by at least k0 steps.
    """
    if params is None:
        params = star_params(chain, obs,
                             t_max=max(abs(freq_interval[0]), abs(freq_interval[1])))
    factors = cocycle_factors(chain, obs)
    if n > factors.max_steps:
        raise ModelError("n exceeds the cocycle range")
    if block_range is None:
        d = max(params.k0, 4)
        block_range = (d, 2 * d)
    d_lo, d_hi = block_range
    lo_t, hi_t = freq_interval
    count_pts = max(2, int(math.ceil((hi_t - lo_t) / freq_step)) + 1)
    ts = np.linspace(lo_t, hi_t, count_pts)
    step_t = ts[1] - ts[0] if len(ts) > 1 else 0.0
    lip = 0.5 * step_t * obs.sup_norm

    blocks: list[tuple[int, int]] = []
    certs: list[float] = []
    pos = 0
    while pos + d_lo <= n:
        found = None
        for length in range(d_lo, min(d_hi, n - pos) + 1):
            u = _interval_upper(factors, ts, pos, pos + length, params, lip)
            if u <= 1.0 - theta:
                found = (pos, pos + length, u)
                break
        if found is None:
            pos += 1
            continue
        blocks.append((found[0], found[1]))
        certs.append(found[2])
        pos = found[1] + params.k0
    complements = []
    prev = 0
    for s, e in blocks:
        if s > prev:
            complements.append((prev, s))
        prev = e
    if prev < n:
        complements.append((prev, n))
    return BlockDecomposition(tuple(blocks), tuple(complements), len(blocks),
                              theta, params.k0, tuple(certs))
