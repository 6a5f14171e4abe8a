"""Exact distributional analysis and local-limit verification of partial sums.

Everything here rides on sliding-window forward dynamic programs: central
moments up to third order, characteristic functions on frequency grids,
exact lattice (and integer-plus-irrational-lattice) atom distributions.
On top sit the variance-regime classifier, the corange scan for the
lattice span, the local limit checks in both regimes, first-order
Edgeworth expansions, the small-frequency Gaussian norm bound, the
scaled characteristic-function integral, and the two-sided pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from markovllt.chain import (
    ChainSpec,
    ModelError,
    validate_assumptions,
    window_law,
)
from markovllt.observables import (
    Decomposition,
    WindowObservable,
    gordin_decomposition,
    sinai_reduce,
)
from markovllt.transfer import (
    StarNormParams,
    cocycle_factors,
    star_params,
    upper_curve,
)

SQRT_2PI = math.sqrt(2.0 * math.pi)


class ReducibleInputError(ModelError):
    """The sequence reduces to a coarser lattice; the generalized local law
    for that case is out of this engine's scope."""


class AmbiguousGridError(ModelError):
    """Non-decaying frequencies do not form a grid at this resolution."""


class DegenerateVarianceError(ModelError):
    """sigma_n does not grow; local limit checks do not apply."""


class NeedMoreSamplesError(ModelError):
    """Monte Carlo standard error exceeds half the requested tolerance."""


# ---------------------------------------------------------------------------
# sliding-window forward dynamic program
# ---------------------------------------------------------------------------


class _ForwardWindow:
    """Joint law over a sliding coordinate window, with leading batch axes.

    The window at step j covers [max(0, j - p), j + q]; `consume` applies a
    per-cell update for f_j, `advance` extends by one forward kernel and
    marginalises coordinates that fell out of every future window.
    """

    def __init__(self, chain: ChainSpec, obs: WindowObservable, n: int):
        obs.check_horizon(chain)
        if n < 1 or n > len(obs):
            raise ModelError(f"sum length {n} outside observable range")
        self.chain = chain
        self.obs = obs
        self.n = n
        self.p = max(obs.pasts[:n])
        self.q = max(obs.futures[:n])
        if n - 1 + self.q > chain.horizon:
            raise ModelError("horizon too short for the requested sum length")
        self.lo = 0
        self.hi = self.q
        self.law = window_law(chain, 0, self.q + 1)

    def table_in_window(self, j: int, arr_ndim_batch: int) -> np.ndarray:
        """f_j's table broadcast into the current window axes."""
        t = self.obs.tables[j]
        start = j - self.obs.pasts[j]
        width = self.hi - self.lo + 1
        exp = [1] * width
        for ax in range(t.ndim):
            exp[start - self.lo + ax] = t.shape[ax]
        shaped = t.reshape(exp)
        return shaped.reshape((1,) * arr_ndim_batch + shaped.shape)

    def advance(self, j: int):
        """Move the window from step j to step j+1 (law and bounds)."""
        kern = self.chain.kernels[self.hi]
        self.law = self.law[..., :, None] * kern
        self.hi += 1
        new_lo = max(0, j + 1 - self.p)
        while self.lo < new_lo:
            self.law = self.law.sum(axis=0)
            self.lo += 1

    def advance_batched(self, arr: np.ndarray, n_batch: int) -> np.ndarray:
        """Apply the same extend/marginalise step to a batched array."""
        kern = self.chain.kernels[self.hi]
        arr = arr[..., :, None] * kern
        drop = max(0, max(0, self._j_next - self.p) - self.lo)
        for _ in range(drop):
            arr = arr.sum(axis=n_batch)
        return arr

    # advance() and advance_batched() must see the same step index; callers
    # use the combined step() below to keep them in lock step.
    _j_next = 0

    def step(self, j: int, arrs: list[np.ndarray], n_batch: int) -> list[np.ndarray]:
        self._j_next = j + 1
        out = [self.advance_batched(a, n_batch) for a in arrs]
        self.advance(j)
        return out


@dataclass(frozen=True)
class MomentData:
    ns: tuple[int, ...]
    mean: np.ndarray
    variance: np.ndarray
    third_central: np.ndarray
    step_means: np.ndarray

    def sigma(self, idx: int) -> float:
        return math.sqrt(max(self.variance[idx], 0.0))


def exact_moments(chain: ChainSpec, obs: WindowObservable,
                  n_grid: Sequence[int]) -> MomentData:
    """First three central moments of S_n, exactly, on a grid of n.

    Propagates E[1{window} * Sbar^m] for m <= 3 with per-step centred
    values, so no large-mean cancellation occurs.
    """
    n_grid = sorted(set(int(n) for n in n_grid))
    n_max = n_grid[-1]
    win = _ForwardWindow(chain, obs, n_max)
    t1 = np.zeros_like(win.law)
    t2 = np.zeros_like(win.law)
    t3 = np.zeros_like(win.law)
    step_means = []
    out_mean, out_var, out_third = [], [], []
    for j in range(n_max):
        f = win.table_in_window(j, 0)
        mean_j = float((win.law * f).sum())
        step_means.append(mean_j)
        fb = f - mean_j
        t3 = t3 + 3.0 * fb * t2 + 3.0 * fb ** 2 * t1 + fb ** 3 * win.law
        t2 = t2 + 2.0 * fb * t1 + fb ** 2 * win.law
        t1 = t1 + fb * win.law
        if (j + 1) in n_grid:
            out_mean.append(float(np.sum(step_means)))
            out_var.append(float(t2.sum()))
            out_third.append(float(t3.sum()))
        if j + 1 < n_max:
            t1, t2, t3 = win.step(j, [t1, t2, t3], 0)
    return MomentData(tuple(n_grid), np.array(out_mean), np.array(out_var),
                      np.array(out_third), np.array(step_means))


def char_function(chain: ChainSpec, obs: WindowObservable,
                  ts: Sequence[float], n_grid: Sequence[int],
                  conditional: bool = False) -> np.ndarray:
    """E[exp(i t S_n)] on a frequency grid, exactly; shape (len(n_grid), len(ts)).

    With conditional=True returns instead the sup over terminal windows of
    |E[exp(i t S_n) | window]|, a lower bound for the twisted operator norm.
    """
    ts = np.asarray(ts, dtype=float)
    n_grid = sorted(set(int(n) for n in n_grid))
    n_max = n_grid[-1]
    win = _ForwardWindow(chain, obs, n_max)
    psi = np.broadcast_to(win.law, (len(ts),) + win.law.shape).astype(complex).copy()
    out = np.zeros((len(n_grid), len(ts)), dtype=complex if not conditional else float)
    row = 0
    for j in range(n_max):
        f = win.table_in_window(j, 1)
        psi = psi * np.exp(1j * ts.reshape((-1,) + (1,) * (psi.ndim - 1)) * f)
        if (j + 1) in n_grid:
            axes = tuple(range(1, psi.ndim))
            if conditional:
                law = np.maximum(win.law, 1e-300)
                out[row] = np.abs(psi / law).max(axis=axes)
            else:
                out[row] = psi.sum(axis=axes)
            row += 1
        if j + 1 < n_max:
            (psi,) = win.step(j, [psi], 1)
    return out


# ---------------------------------------------------------------------------
# variance regime
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeResult:
    regime: str  # "bounded" | "divergent" | "inconclusive"
    ns: tuple[int, ...]
    variances: np.ndarray
    tail_slope: float
    eta: float
    growth_rate: float | None = None
    decomposition: Decomposition | None = None


def variance_regime(chain: ChainSpec, obs: WindowObservable,
                    n_grid: Sequence[int], eta_factor: float = 1e-3,
                    with_decomposition: bool = True) -> RegimeResult:
    """Classify Var(S_n) as bounded or divergent from its tail slope.

    "bounded" when the fitted slope over the last half of the grid is at
    most eta = eta_factor * max(Var); the bounded branch carries the
    martingale/coboundary decomposition as evidence.  Too few grid points
    yield an explicit "inconclusive".
    """
    mom = exact_moments(chain, obs, n_grid)
    ns = np.array(mom.ns, dtype=float)
    var = mom.variance
    if len(ns) < 4:
        return RegimeResult("inconclusive", mom.ns, var, math.nan, math.nan)
    half = len(ns) // 2
    slope = float(np.polyfit(ns[half:], var[half:], 1)[0])
    vmax = float(var.max())
    if vmax <= 1e-12:
        dec = gordin_decomposition(chain, obs) if with_decomposition else None
        return RegimeResult("bounded", mom.ns, var, slope, 0.0, decomposition=dec)
    eta = eta_factor * vmax
    if slope <= eta:
        dec = gordin_decomposition(chain, obs) if with_decomposition else None
        return RegimeResult("bounded", mom.ns, var, slope, eta, decomposition=dec)
    return RegimeResult("divergent", mom.ns, var, slope, eta, growth_rate=slope)


# ---------------------------------------------------------------------------
# corange scan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorangeResult:
    kind: str  # "everything" | "irreducible" | "reducible"
    scan_lo: float
    scan_hi: float
    t_step: float
    t0: float | None = None
    h0: float | None = None
    detections: tuple[float, ...] = ()
    detection_rates: tuple[float, ...] = ()
    integer_span_exceeds_one: bool | None = None

    @property
    def irreducible(self) -> bool:
        return self.kind == "irreducible"


def _cluster(indices: np.ndarray) -> list[np.ndarray]:
    if len(indices) == 0:
        return []
    splits = np.nonzero(np.diff(indices) > 1)[0] + 1
    return np.split(indices, splits)


def _fit_rates(ns: np.ndarray, mags: np.ndarray) -> np.ndarray:
    """Per-frequency exponential decay rate over the last half of the n grid."""
    half = len(ns) // 2
    sel = slice(half, None) if len(ns) > 2 else slice(None)
    logs = np.log(np.maximum(mags[sel], 1e-300))
    slope = np.polyfit(ns[sel].astype(float), logs, 1)[0]
    return np.exp(slope)


def corange_scan(chain: ChainSpec, obs: WindowObservable,
                 t_hi: float, t_step: float = 1e-3,
                 n_grid: Sequence[int] | None = None,
                 rate_threshold: float = 1.0 - 1e-6,
                 t_lo: float | None = None,
                 refine: bool = True,
                 regime: RegimeResult | None = None,
                 use_conditional: bool = True) -> CorangeResult:
    """Scan for frequencies where the characteristic function refuses to decay.

    Evidence at each grid frequency is the fitted per-step decay rate of
    max(|E exp(itS_n)|, sup over windows of the conditional magnitude) over
    the last half of the n grid.  The small-frequency Gaussian shoulder
    (where rates approach 1 like exp(-c t^2) regardless of arithmetic) is
    excluded below t_lo, which defaults to 3 * sqrt(2 (1 - threshold) / vbar)
    with vbar the tail per-step variance.  Detected frequencies must form a
    grid t0 * Z; anything else raises AmbiguousGridError.
    """
    if n_grid is None:
        n_grid = [25, 50, 75, 100, 125, 150, 175, 200]
    n_grid = sorted(set(int(n) for n in n_grid))
    if regime is None:
        regime = variance_regime(chain, obs, n_grid, with_decomposition=False)
    if regime.regime == "bounded":
        return CorangeResult("everything", 0.0, t_hi, t_step)
    ns = np.array(regime.ns, dtype=float)
    half = len(ns) // 2
    vbar = (regime.variances[-1] - regime.variances[half]) / (ns[-1] - ns[half])
    vbar = max(vbar, 1e-12)
    auto_lo = 3.0 * math.sqrt(2.0 * (1.0 - rate_threshold) / vbar)
    lo = max(t_lo if t_lo is not None else 0.0, auto_lo)
    ts = np.arange(max(lo, t_step), t_hi + 0.5 * t_step, t_step)
    if len(ts) == 0:
        raise ModelError("empty frequency grid after the Gaussian exclusion")

    phi = np.abs(char_function(chain, obs, ts, n_grid))
    if use_conditional:
        cond = char_function(chain, obs, ts, n_grid, conditional=True)
        phi = np.maximum(phi, np.minimum(cond, 1.0))
    nvec = np.array(n_grid, dtype=float)
    sel = slice(len(nvec) // 2, None)
    logs = np.log(np.maximum(phi[sel], 1e-300))
    slopes = np.polyfit(nvec[sel], logs, 1)[0]
    rates = np.exp(slopes)
    # magnitudes that underflowed have genuinely decayed, whatever the fit says
    rates[phi[-1] < 1e-150] = 0.0

    flagged = np.nonzero(rates >= rate_threshold)[0]
    clusters = _cluster(flagged)
    n_pair = [n_grid[len(n_grid) // 2], n_grid[-1]]

    def rate_at(t: float) -> float:
        vals = np.abs(char_function(chain, obs, [t], n_pair))[:, 0]
        if use_conditional:
            cv = char_function(chain, obs, [t], n_pair, conditional=True)[:, 0]
            vals = np.maximum(vals, np.minimum(cv, 1.0))
        if vals[0] <= 1e-300 or vals[1] < 1e-150:
            return 0.0
        return float((vals[1] / vals[0]) ** (1.0 / (n_pair[1] - n_pair[0])))

    reps, rep_rates = [], []
    for cl in clusters:
        peak = cl[np.argmax(rates[cl])]
        t_peak = ts[peak]
        if refine:
            res = minimize_scalar(
                lambda t: -rate_at(t),
                bounds=(max(lo, t_peak - 2 * t_step), min(t_hi, t_peak + 2 * t_step)),
                method="bounded", options={"xatol": 1e-10})
            t_peak = float(res.x)
        reps.append(t_peak)
        rep_rates.append(float(max(rates[cl])))

    integer_flag = None
    if not reps:
        return CorangeResult("irreducible", lo, t_hi, t_step,
                             detections=(), detection_rates=())
    t0 = reps[0]
    mults = [round(r / t0) for r in reps]
    if any(m < 1 for m in mults):
        raise AmbiguousGridError("detected frequency below the candidate generator; "
                                 "rescan with a finer grid")
    # refine the generator by least squares over all detections
    t0 = float(np.dot(mults, reps) / np.dot(mults, mults))
    tol = 2.5 * t_step
    for r, m in zip(reps, mults):
        if abs(r - m * t0) > tol:
            raise AmbiguousGridError(
                f"non-decay at {r:.6f} is incommensurate with generator {t0:.6f}; "
                "rescan with a finer grid")
    m_max = int(math.floor((t_hi + tol) / t0))
    for m in range(1, m_max + 1):
        target = m * t0
        if target < lo - tol or target > t_hi + tol:
            continue
        if not any(abs(r - target) <= tol for r in reps):
            raise AmbiguousGridError(
                f"expected non-decay at multiple {target:.6f} of the generator "
                "was not detected; rescan with a finer grid")
    h0 = 2.0 * math.pi / t0
    if obs.step_offsets() is not None:
        integer_flag = h0 > 1.0 + 1e-3
    return CorangeResult("reducible", lo, t_hi, t_step, t0=t0, h0=h0,
                         detections=tuple(reps), detection_rates=tuple(rep_rates),
                         integer_span_exceeds_one=integer_flag)


# ---------------------------------------------------------------------------
# exact lattice distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeDistribution:
    """Exact atoms of S_n on offset + Z (+ beta Z)."""

    values: np.ndarray
    probs: np.ndarray
    offset: float
    m: np.ndarray
    k: np.ndarray | None
    beta: float | None

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def sigma(self) -> float:
        mu = self.mean()
        return math.sqrt(max(float(np.dot((self.values - mu) ** 2, self.probs)), 0.0))

    def third_central(self) -> float:
        mu = self.mean()
        return float(np.dot((self.values - mu) ** 3, self.probs))


def _integer_tables(obs: WindowObservable, n: int,
                    beta: float | None, tol: float = 1e-9):
    """Per-step integer (and beta-multiple) shift tables plus real offsets."""
    offs = np.zeros(n)
    ms, ks = [], []
    for j in range(n):
        t = obs.tables[j]
        if beta is None:
            c = float(t.flat[0])
            m = np.round(t - c)
            if np.abs((t - c) - m).max() > tol:
                raise ModelError("observable is not integer valued up to "
                                 "per-step constants")
            offs[j] = c
            ms.append(m.astype(np.int64))
            ks.append(None)
        else:
            m = np.zeros(t.shape, dtype=np.int64)
            k = np.zeros(t.shape, dtype=np.int64)
            mf, kf = m.reshape(-1), k.reshape(-1)
            for idx, x in enumerate(t.reshape(-1)):
                for kk in range(-6, 7):
                    r = x - kk * beta
                    if abs(r - round(r)) <= tol:
                        mf[idx] = int(round(r))
                        kf[idx] = kk
                        break
                else:
                    raise ModelError(f"value {x} is not on Z + beta Z for "
                                     f"beta = {beta}")
            ms.append(m)
            ks.append(k)
    return offs, ms, ks


def lattice_distribution(chain: ChainSpec, obs: WindowObservable, n: int,
                         beta: float | None = None,
                         budget: int = 4_000_000) -> LatticeDistribution:
    """Exact distribution of S_n by dynamic programming over (window, value).

    Values live on offset + Z for integer-valued steps; with a declared
    irrational beta they live on offset + Z + beta Z and the atom count is
    quadratic in n.  Exceeding the cell budget raises ModelError.
    """
    offs, ms, ks = _integer_tables(obs, n, beta)
    lo_m = sum(int(m.min()) for m in ms)
    hi_m = sum(int(m.max()) for m in ms)
    len_m = hi_m - lo_m + 1
    if beta is not None:
        lo_k = sum(int(k.min()) for k in ks)
        hi_k = sum(int(k.max()) for k in ks)
        len_k = hi_k - lo_k + 1
    else:
        len_k = 1
    win = _ForwardWindow(chain, obs, n)
    cells = int(np.prod(win.law.shape)) * len_m * len_k
    if cells > budget:
        raise ModelError(f"lattice DP needs {cells} cells, budget is {budget}")

    # value axes lead (batch), window axes trail so the kernel-extend step
    # can append coordinates at the end
    arr = np.zeros((len_m, len_k) + win.law.shape)
    arr[0, 0] = win.law
    cur_lo_m = 0
    cur_lo_k = 0
    for j in range(n):
        # realise the integer shifts on the full window
        width = win.hi - win.lo + 1
        start = j - obs.pasts[j] - win.lo
        exp = [1] * width
        for ax in range(ms[j].ndim):
            exp[start + ax] = ms[j].shape[ax]
        m_full = np.broadcast_to(ms[j].reshape(exp), win.law.shape)
        if beta is not None:
            k_full = np.broadcast_to(ks[j].reshape(exp), win.law.shape)
        else:
            k_full = np.zeros(win.law.shape, dtype=np.int64)
        m_min = int(ms[j].min())
        k_min = int(ks[j].min()) if beta is not None else 0
        shifts = {(int(a), int(b)) for a, b in
                  zip(m_full.reshape(-1), k_full.reshape(-1))}
        new = np.zeros_like(arr)
        for a, b in shifts:
            mask = (m_full == a) & (k_full == b)
            sa, sb = a - m_min, b - k_min
            src = arr[:, :, mask]  # (len_m, len_k, n_cells)
            if sa or sb:
                shifted = np.zeros_like(src)
                shifted[sa:, sb:, :] = src[:len_m - sa, :len_k - sb, :]
                src = shifted
            new[:, :, mask] += src
        arr = new
        cur_lo_m += m_min
        cur_lo_k += k_min
        if j + 1 < n:
            (arr,) = win.step(j, [arr], 2)

    joint = arr.reshape((len_m, len_k, -1)).sum(axis=2)
    total_off = float(offs[:n].sum())
    mi, ki = np.nonzero(joint > 0.0)
    probs = joint[mi, ki]
    m_vals = mi + cur_lo_m
    k_vals = ki + cur_lo_k
    values = total_off + m_vals + (0.0 if beta is None else beta) * k_vals
    order = np.argsort(values)
    return LatticeDistribution(
        values=values[order], probs=probs[order], offset=total_off,
        m=m_vals[order], k=(None if beta is None else k_vals[order]), beta=beta)


# ---------------------------------------------------------------------------
# local limit checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeLltCurve:
    ns: tuple[int, ...]
    errors: tuple[float, ...]
    envelope_nonincreasing: bool
    final_error: float


def lattice_llt_check(chain: ChainSpec, obs: WindowObservable,
                      n_grid: Sequence[int],
                      corange: CorangeResult | None = None) -> LatticeLltCurve:
    """sup_u |sqrt(2 pi) sigma_n P(S_n = u) - Gaussian| on the step lattice.

    Requires span-1 (irreducible as an integer sequence): a reducible
    corange result is refused because only the generalized local law covers
    that case, which is out of scope here.
    """
    if corange is not None and corange.kind == "reducible" and \
            (corange.integer_span_exceeds_one or corange.integer_span_exceeds_one is None):
        raise ReducibleInputError(
            "sequence reduces to a span > 1 lattice; the generalized "
            "reducible-case local law is not implemented")
    errs = []
    n_grid = sorted(set(int(n) for n in n_grid))
    for n in n_grid:
        dist = lattice_distribution(chain, obs, n)
        mu, sig = dist.mean(), dist.sigma()
        if sig <= 0.0:
            raise DegenerateVarianceError("sigma_n vanished in the lattice check")
        lo = int(math.floor(dist.m.min() - 10.0 * sig))
        hi = int(math.ceil(dist.m.max() + 10.0 * sig))
        grid_m = np.arange(lo, hi + 1)
        atol = np.zeros(len(grid_m))
        atol[dist.m - lo] = dist.probs
        u = dist.offset + grid_m
        gauss = np.exp(-((u - mu) ** 2) / (2.0 * sig * sig))
        errs.append(float(np.abs(SQRT_2PI * sig * atol - gauss).max()))
    env = all(errs[i + 1] <= errs[i] + 1e-9 for i in range(len(errs) - 1))
    return LatticeLltCurve(tuple(n_grid), tuple(errs), env, errs[-1])


@dataclass(frozen=True)
class TestKernel:
    """Continuous, compactly supported, piecewise-linear test function."""

    knots: np.ndarray
    values: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.knots, self.values, left=0.0, right=0.0)

    @property
    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.knots))

    @classmethod
    def triangle(cls, half_width: float = 1.0) -> "TestKernel":
        h = 1.0 / half_width  # unit integral
        return cls(np.array([-half_width, 0.0, half_width]),
                   np.array([0.0, h, 0.0]))


@dataclass(frozen=True)
class NonlatticeReport:
    n: int
    u_grid: np.ndarray
    display: np.ndarray
    sup_error: float
    mode: str  # "exact" | "monte-carlo"
    stderr: np.ndarray | None
    mean: float
    sigma: float


def nonlattice_llt_check(chain: ChainSpec, obs: WindowObservable, n: int,
                         kernel: TestKernel, u_grid: np.ndarray | None = None,
                         beta: float | None = None,
                         mode: str = "auto",
                         mc_samples: int = 1_000_000,
                         seed: int = 0,
                         threads: int = 1,
                         tolerance: float | None = None,
                         s_samples: np.ndarray | None = None,
                         moments: tuple[float, float] | None = None) -> NonlatticeReport:
    """Compare sqrt(2 pi) sigma E[g(S_n - u)] against the Gaussian display.

    Exact atom enumeration is used whenever the values live on an
    offset-integer or declared beta lattice; otherwise the expectation is
    estimated by seeded Monte Carlo with batch-means standard errors, and
    an error larger than half the tolerance demands more samples.
    """
    exact_ok = True
    dist = None
    if s_samples is not None:
        exact_ok = False
    else:
        try:
            dist = lattice_distribution(chain, obs, n, beta=beta)
        except ModelError:
            exact_ok = False
    if mode == "exact" and not exact_ok:
        raise ModelError("exact mode requested but values are not lattice-representable")
    use_exact = exact_ok and mode != "monte-carlo"

    if moments is not None:
        mu, sig = moments
    elif use_exact:
        mu, sig = dist.mean(), dist.sigma()
    else:
        mom = exact_moments(chain, obs, [n])
        mu, sig = mom.mean[0], mom.sigma(0)
    if sig <= 0.0:
        raise DegenerateVarianceError("sigma_n vanished in the non-lattice check")
    if u_grid is None:
        u_grid = mu + sig * np.linspace(-4.0, 4.0, 41)
    u_grid = np.asarray(u_grid, dtype=float)
    keep = np.abs(u_grid - mu) <= 8.0 * sig  # both sides below 1e-6 beyond
    gauss = kernel.integral * np.exp(-((u_grid - mu) ** 2) / (2.0 * sig * sig))

    if use_exact:
        expect = np.array([
            float(np.dot(dist.probs, kernel(dist.values - u))) for u in u_grid])
        display = SQRT_2PI * sig * expect - gauss
        sup = float(np.abs(display[keep]).max())
        return NonlatticeReport(n, u_grid, display, sup, "exact", None, mu, sig)

    from markovllt.sim import observable_sums
    if s_samples is None:
        s_samples = observable_sums(chain, obs, n, mc_samples, seed, threads=threads)
    vals = np.array([kernel(s_samples - u) for u in u_grid])
    est = vals.mean(axis=1)
    n_batch = 32
    cut = (len(s_samples) // n_batch) * n_batch
    bm = vals[:, :cut].reshape(len(u_grid), n_batch, -1).mean(axis=2)
    se = bm.std(axis=1, ddof=1) / math.sqrt(n_batch)
    display = SQRT_2PI * sig * est - gauss
    scaled_se = SQRT_2PI * sig * se
    if tolerance is not None and float(scaled_se[keep].max()) > 0.5 * tolerance:
        raise NeedMoreSamplesError(
            f"Monte Carlo stderr {float(scaled_se.max()):.3g} exceeds half the "
            f"tolerance {tolerance}; increase mc_samples")
    sup = float(np.abs(display[keep]).max())
    return NonlatticeReport(n, u_grid, display, sup, "monte-carlo",
                            scaled_se, mu, sig)


# ---------------------------------------------------------------------------
# Edgeworth expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeworthReport:
    ns: tuple[int, ...]
    scaled_residual_cubic: tuple[float, ...]
    scaled_residual_classic: tuple[float, ...]
    best_variant: str
    best_nonincreasing: bool
    correction_sup: tuple[float, ...]
    correction_constants: tuple[float, ...]  # sigma_n * sup|correction|


def _cdf_sup_error(values: np.ndarray, probs: np.ndarray,
                   mu: float, sig: float, third: float,
                   poly: str) -> float:
    t = (values - mu) / sig
    cdf = np.cumsum(probs)
    phi = np.exp(-0.5 * t * t) / SQRT_2PI
    if poly == "cubic":
        corr = third * (t ** 3 - 3.0 * t) / (6.0 * sig ** 3) * phi
    else:
        corr = third * (1.0 - t * t) / (6.0 * sig ** 3) * phi
    target = ndtr(t) + corr
    left = np.concatenate(([0.0], cdf[:-1]))
    return float(np.maximum(np.abs(cdf - target), np.abs(left - target)).max())


def edgeworth_check(chain: ChainSpec, obs: WindowObservable,
                    n_grid: Sequence[int],
                    beta: float | None = None) -> EdgeworthReport:
    """First-order Edgeworth residuals, scaled by sigma_n, for both
    correction polynomials (t^3 - 3t and 1 - t^2); reports which variant
    matches the exact CDF better and the O(1/sigma_n) size of the correction.
    """
    n_grid = sorted(set(int(n) for n in n_grid))
    res_cubic, res_classic, corr_sup, corr_const = [], [], [], []
    tfine = np.linspace(-8.0, 8.0, 4001)
    phif = np.exp(-0.5 * tfine * tfine) / SQRT_2PI
    for n in n_grid:
        dist = lattice_distribution(chain, obs, n, beta=beta)
        mu, sig, third = dist.mean(), dist.sigma(), dist.third_central()
        if sig <= 0.0:
            raise DegenerateVarianceError("sigma_n vanished in the Edgeworth check")
        res_cubic.append(sig * _cdf_sup_error(dist.values, dist.probs, mu, sig,
                                              third, "cubic"))
        res_classic.append(sig * _cdf_sup_error(dist.values, dist.probs, mu, sig,
                                                third, "classic"))
        sup_c = float(np.abs(third * (tfine ** 3 - 3 * tfine) / (6 * sig ** 3)
                             * phif).max())
        corr_sup.append(sup_c)
        corr_const.append(sig * sup_c)
    best = "cubic" if res_cubic[-1] <= res_classic[-1] else "classic"
    curve = res_cubic if best == "cubic" else res_classic
    noninc = all(curve[i + 1] <= curve[i] + 1e-9 for i in range(len(curve) - 1))
    return EdgeworthReport(tuple(n_grid), tuple(res_cubic), tuple(res_classic),
                           best, noninc, tuple(corr_sup), tuple(corr_const))


# ---------------------------------------------------------------------------
# frequency-domain bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmallTFit:
    c2: float
    big_c2: float
    c1: float
    big_c1: float
    delta: float
    sandwich_ok: bool


def small_t_gaussian_bound(chain: ChainSpec, obs: WindowObservable,
                           delta: float, n_grid: Sequence[int],
                           t_count: int = 7,
                           params: StarNormParams | None = None) -> SmallTFit:
    """Fit constants for upper||L_t^n||_* <= C2 exp(-c2 sigma_n^2 t^2), |t| <= delta,
    and the matching characteristic-function lower bound C1 exp(-c1 Var).
    """
    if params is None:
        params = star_params(chain, obs, t_max=max(delta, 1.0))
    n_grid = sorted(set(int(n) for n in n_grid))
    ts = np.linspace(delta / t_count, delta, t_count)
    factors = cocycle_factors(chain, obs)
    uppers = upper_curve(factors, ts, n_grid, params)
    mom = exact_moments(chain, obs, n_grid)
    var = np.maximum(mom.variance, 1e-300)
    big_c2 = max(1.0, float(uppers.max()))
    expo = var[:, None] * ts[None, :] ** 2
    with np.errstate(divide="ignore"):
        c2 = float(np.min(np.log(big_c2 / np.maximum(uppers, 1e-300)) / expo))
    lows = np.abs(char_function(chain, obs, ts, n_grid))
    pos = lows > 1e-300
    if pos.any():
        c1 = float(np.max(np.log(1.0 / lows[pos]) / expo[pos]))
    else:
        c1 = math.inf
    sandwich = bool(np.all(lows <= uppers + 1e-9))
    return SmallTFit(c2=max(c2, 0.0), big_c2=big_c2, c1=c1, big_c1=1.0,
                     delta=delta, sandwich_ok=sandwich)


@dataclass(frozen=True)
class SuffIntegralCurve:
    ns: tuple[int, ...]
    scaled: tuple[float, ...]
    raw: tuple[float, ...]
    lattice_variant: bool
    envelope_nonincreasing: bool


def suff_integral(chain: ChainSpec, obs: WindowObservable,
                  delta: float, t_hi: float, n_grid: Sequence[int],
                  lattice: bool = False, t_step: float = 1e-2,
                  corange: CorangeResult | None = None,
                  params: StarNormParams | None = None) -> SuffIntegralCurve:
    """sigma_n-scaled integral of certified norm upper bounds over [delta, T]
    (or [delta, 2 pi - delta] in the lattice variant)."""
    hi = (2.0 * math.pi - delta) if lattice else t_hi
    if corange is not None and corange.kind == "reducible":
        bad = [m * corange.t0 for m in range(1, 50)
               if delta <= m * corange.t0 <= hi]
        if bad:
            raise ReducibleInputError(
                f"non-decaying frequencies {bad[:3]} inside the integration "
                "range; the scaled integral cannot vanish")
    mom = exact_moments(chain, obs, sorted(set(int(n) for n in n_grid)))
    if mom.sigma(len(mom.ns) - 1) <= 1e-9:
        raise DegenerateVarianceError("sigma_n does not grow; integral check refused")
    if params is None:
        params = star_params(chain, obs, t_max=hi)
    ts = np.arange(delta, hi + 0.5 * t_step, t_step)
    factors = cocycle_factors(chain, obs)
    uppers = upper_curve(factors, ts, mom.ns, params)
    raw = np.trapezoid(uppers, ts, axis=1)
    scaled = np.array([mom.sigma(i) for i in range(len(mom.ns))]) * raw
    env = all(scaled[i + 1] <= scaled[i] + 1e-9 for i in range(len(scaled) - 1))
    return SuffIntegralCurve(mom.ns, tuple(scaled), tuple(raw), lattice, env)


# ---------------------------------------------------------------------------
# two-sided pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoSidedReport:
    reduction_residual: float
    cond_constant: float
    char_domination_ok: bool
    char_domination_margin: float
    corange_f: CorangeResult
    corange_reduced: CorangeResult
    corange_agree: bool
    regime: RegimeResult


def _reduction_residual(chain: ChainSpec, obs: WindowObservable,
                        u: WindowObservable, g: WindowObservable) -> float:
    from markovllt.observables import _aligned_sum
    worst = 0.0
    m = len(obs)
    for j in range(m):
        parts = [(j - obs.pasts[j], obs.tables[j], 1.0),
                 (j, g.tables[j], -1.0),
                 (j - u.pasts[j], u.tables[j], 1.0)]
        if j + 1 < m + 1:
            nxt_lo = (j + 1) - u.pasts[j + 1] if j + 1 < len(u.tables) else j + 1
        if j + 1 < len(u.tables):
            parts.append(((j + 1) - u.pasts[j + 1], u.tables[j + 1], -1.0))
        _, res = _aligned_sum(parts, chain)
        worst = max(worst, float(np.abs(res).max()))
    return worst


def two_sided_llt(chain: ChainSpec, obs: WindowObservable,
                  t_hi: float, t_step: float = 1e-3,
                  n_grid: Sequence[int] | None = None,
                  anchor: Sequence[int] | None = None,
                  char_t_grid: Sequence[float] | None = None,
                  cond_cap: float = 1e6) -> TwoSidedReport:
    """Full pipeline for observables that read past coordinates.

    Reduces f to a one-sided g plus an exact coboundary, validates the
    conditional-domination constant, checks that |E exp(itS_n f)| is
    dominated by that constant times the certified norm upper bounds of
    the reduced cocycle, and compares the corange scans of f and g.  The
    scan on f sees only linear statistics, so agreement is judged as:
    every non-decaying frequency of f lies on g's detected grid (and g's
    scan is authoritative for the span).
    """
    if n_grid is None:
        n_grid = [25, 50, 75, 100, 125, 150, 175, 200]
    report = validate_assumptions(chain, cond_cap=cond_cap)
    if not report.pass_cond:
        raise ModelError(
            f"conditional-domination constant {report.cond_constant:.3g} exceeds "
            f"the cap {cond_cap}; two-sided mode refused")
    if obs.one_sided:
        u = WindowObservable(tuple(np.zeros(chain.size(j)) for j in range(len(obs))),
                             (0,) * len(obs), (0,) * len(obs))
        g = obs
        residual = 0.0
    else:
        u, g = sinai_reduce(obs, chain, anchor=anchor)
        residual = _reduction_residual(chain, obs, u, g)

    regime = variance_regime(chain, obs, n_grid, with_decomposition=False)
    cor_f = corange_scan(chain, obs, t_hi, t_step, n_grid, regime=regime)
    cor_g = corange_scan(chain, g, t_hi, t_step, n_grid)

    if cor_f.kind == "irreducible":
        agree = True  # nothing detected on f needs explaining
        if cor_g.kind == "reducible":
            # f's linear statistics can miss drift-compensated reductions;
            # g's detections are authoritative and do not contradict f
            agree = True
    elif cor_f.kind == "everything":
        agree = cor_g.kind == "everything"
    else:
        if cor_g.kind != "reducible":
            agree = False
        else:
            tol = 2.5 * t_step
            agree = all(
                abs(r - round(r / cor_g.t0) * cor_g.t0) <= tol and round(r / cor_g.t0) >= 1
                for r in cor_f.detections)

    if char_t_grid is None:
        char_t_grid = np.linspace(0.1, t_hi, 24)
    char_t_grid = np.asarray(char_t_grid, dtype=float)
    phis = np.abs(char_function(chain, obs, char_t_grid, n_grid))
    params = star_params(chain, g, t_max=float(np.abs(char_t_grid).max()),
                         delta=report.delta)
    factors = cocycle_factors(chain, g)
    usable = [n for n in sorted(set(int(x) for x in n_grid)) if n <= factors.max_steps]
    uppers = upper_curve(factors, char_t_grid, usable, params)
    rows = [sorted(set(int(x) for x in n_grid)).index(n) for n in usable]
    margin = float((report.cond_constant * uppers - phis[rows]).min())
    dominated = margin >= -1e-9
    return TwoSidedReport(
        reduction_residual=residual,
        cond_constant=report.cond_constant,
        char_domination_ok=bool(dominated),
        char_domination_margin=margin,
        corange_f=cor_f,
        corange_reduced=cor_g,
        corange_agree=bool(agree),
        regime=regime,
    )


@dataclass(frozen=True)
class LltReport:
    """Bundle of verification outcomes for one scenario run."""

    regime: str
    corange: CorangeResult | None
    curves: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
