"""Products of chain-driven positive matrices and sequential Lyapunov data.

Positive matrices with entries in [1/C, C] act as uniform contractions of
the positive cone in the Hilbert projective metric, which gives a
sequential Perron-Frobenius theory for their ordered products: window
approximations of the growth factors with certified geometric tails, a
rank-one convergence certificate, a log-norm partial-sum reduction feeding
the local-limit pipeline, and, separately, perturbative splittings of a
hyperbolic matrix into sequential one-dimensional invariant directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from markovllt.chain import ChainSpec, ModelError
from markovllt.observables import WindowObservable
from markovllt.transfer import fit_geometric

ENTRY_TOL = 1e-12


@dataclass(frozen=True)
class PositiveMatrixFamily:
    """Per-step, per-state positive matrices with entries in [1/C, C]."""

    dim: int
    bound: float
    maps: tuple[tuple[np.ndarray, ...], ...]  # maps[j][state]

    def __post_init__(self):
        if self.bound < 1.0:
            raise ModelError("entry bound C must be at least 1")
        maps = tuple(tuple(np.asarray(m, dtype=float) for m in row)
                     for row in self.maps)
        object.__setattr__(self, "maps", maps)
        lo, hi = 1.0 / self.bound - ENTRY_TOL, self.bound + ENTRY_TOL
        for j, row in enumerate(maps):
            for s, m in enumerate(row):
                if m.shape != (self.dim, self.dim):
                    raise ModelError(f"matrix at step {j} state {s} has shape {m.shape}")
                if m.min() < lo or m.max() > hi:
                    raise ModelError(f"matrix at step {j} state {s} has entries "
                                     f"outside [1/C, C] = [{1/self.bound}, {self.bound}]")

    def at(self, j: int, state: int) -> np.ndarray:
        return self.maps[j][state]

    def steps(self) -> int:
        return len(self.maps)

    @classmethod
    def homogeneous(cls, dim: int, bound: float,
                    by_state: Sequence[np.ndarray], n_steps: int) -> "PositiveMatrixFamily":
        row = tuple(np.asarray(m, dtype=float) for m in by_state)
        return cls(dim, bound, tuple(row for _ in range(n_steps)))


def _hilbert_diameter(m: np.ndarray) -> float:
    """Projective diameter of the image cone: max log cross-ratio."""
    cross = (m[:, None, :, None] * m[None, :, None, :]) / \
            (m[None, :, :, None] * m[:, None, None, :])
    return float(np.log(cross.max()))


@dataclass(frozen=True)
class BirkhoffData:
    rate: float          # tanh(diameter / 4)
    diameter: float
    diameter_bound: float  # log(C^4 d^2)


def birkhoff_rate(family: PositiveMatrixFamily) -> BirkhoffData:
    """Worst-case projective contraction factor over the family."""
    diam = max(_hilbert_diameter(m) for row in family.maps for m in row)
    return BirkhoffData(
        rate=math.tanh(diam / 4.0),
        diameter=diam,
        diameter_bound=math.log(family.bound ** 4 * family.dim ** 2),
    )


@dataclass(frozen=True)
class SequentialPfData:
    """Window growth factors with a certified geometric tail.

    lambda_j is approximated by the window ratio
    F(x_j..x_{j+w}) = mu(A(x_{j+w}) ... A(x_j) 1) / mu(A(x_{j+w}) ... A(x_{j+1}) 1)
    with mu the sum-of-entries functional; the distance to the infinite-window
    limit is at most tail_bound.
    """

    family: PositiveMatrixFamily
    window: int
    birkhoff: BirkhoffData
    tail_bound: float
    lambda_obs: WindowObservable | None  # tables when the budget allows
    value_lo: float
    value_hi: float


def _window_ratio(family: PositiveMatrixFamily, j: int,
                  states: Sequence[int]) -> float:
    """F over one window realisation (len(states) = window + 1 coordinates).

    Ordered products A(x_{j+w}) ... A(x_j) 1 over A(x_{j+w}) ... A(x_{j+1}) 1,
    compared through the sum-of-entries functional.
    """
    prod_top = np.ones(family.dim)
    for offset, s in enumerate(states):
        prod_top = family.at(j + offset, s) @ prod_top
    prod_bot = np.ones(family.dim)
    for offset, s in enumerate(states[1:], start=1):
        prod_bot = family.at(j + offset, s) @ prod_bot
    return float(prod_top.sum() / prod_bot.sum())


def lambda_tail_bound(birkhoff: BirkhoffData, dim: int, bound: float,
                      window: int) -> float:
    """|lambda_j - F_{j,window}| <= scale * (exp(diam * rate^(w-1)/(1-rate)) - 1)."""
    geo = birkhoff.diameter * birkhoff.rate ** max(window - 1, 0) / (1.0 - birkhoff.rate)
    return dim * bound * (math.exp(geo) - 1.0)


def sequential_pf(family: PositiveMatrixFamily, chain: ChainSpec,
                  window: int, table_budget: int = 200_000) -> SequentialPfData:
    """Window approximation of the sequential growth factors.

    Builds the full window tables when the state-space product fits the
    budget (they feed the local-limit pipeline); otherwise only per-path
    evaluation is available.
    """
    if window < 1:
        raise ModelError("window must be positive")
    if window >= family.steps():
        raise ModelError("window exceeding horizon")
    bk = birkhoff_rate(family)
    tail = lambda_tail_bound(bk, family.dim, family.bound, window)
    n_tabs = family.steps() - window
    total = 0
    tabs = []
    for j in range(n_tabs):
        sizes = tuple(chain.size(i) for i in range(j, j + window + 1))
        total += int(np.prod(sizes))
        if total > table_budget:
            tabs = None
            break
        t = np.empty(sizes)
        for flat in range(t.size):
            states = np.unravel_index(flat, sizes)
            t.flat[flat] = _window_ratio(family, j, states)
        tabs.append(t)
    obs = None
    if tabs is not None:
        obs = WindowObservable(tuple(tabs), (0,) * n_tabs,
                               (window,) * n_tabs)
    return SequentialPfData(
        family=family, window=window, birkhoff=bk, tail_bound=tail,
        lambda_obs=obs,
        value_lo=family.dim / family.bound, value_hi=family.dim * family.bound)


def lambda_on_path(family: PositiveMatrixFamily, path: Sequence[int],
                   j: int, window: int) -> float:
    return _window_ratio(family, j, list(path[j:j + window + 1]))


def path_products(family: PositiveMatrixFamily, path: Sequence[int],
                  j: int, n: int) -> np.ndarray:
    out = np.eye(family.dim)
    for k in range(j, j + n):
        out = family.at(k, path[k]) @ out
    return out


@dataclass(frozen=True)
class RrpfCertificate:
    ns: tuple[int, ...]
    residuals: tuple[float, ...]  # max over paths per n
    fitted_c: float
    fitted_rate: float
    birkhoff_rate: float


def _normalized_forward(family, path, upto):
    """Sum-one direction iterates h_k = dir(A products applied to 1/d)."""
    h = [np.full(family.dim, 1.0 / family.dim)]
    lam = []
    for k in range(upto):
        v = family.at(k, path[k]) @ h[-1]
        s = v.sum()
        lam.append(s)
        h.append(v / s)
    return h, np.array(lam)


def rrpf_certificate(family: PositiveMatrixFamily, chain: ChainSpec,
                     j: int, n_grid: Sequence[int],
                     n_paths: int = 32, seed: int = 0,
                     exhaustive_limit: int = 4096) -> RrpfCertificate:
    """Rank-one convergence of normalised products: residual curve and rate.

    Measures ||A_j^n / lambda_{j,n} - h_{j+n} (x) nu_j||_max per path, with
    h from the forward direction recursion, nu from the adjoint one, and
    lambda the exact telescoping sum ratios.  Uses all paths when the path
    count is small, otherwise seeded samples.
    """
    n_grid = sorted(set(int(n) for n in n_grid))
    n_max = n_grid[-1]
    length = j + n_max + 1
    if length > chain.horizon + 1:
        raise ModelError("n_grid exceeds the chain horizon")
    sizes = [chain.size(i) for i in range(length)]
    total = int(np.prod(sizes))
    if total <= exhaustive_limit:
        paths = np.stack(np.unravel_index(np.arange(total), sizes), axis=1)
    else:
        from markovllt.sim import sample_paths
        paths = sample_paths(chain, n_paths, seed).paths[:, :length]
        paths = np.unique(paths, axis=0)

    worst = np.zeros(len(n_grid))
    for path in paths:
        h, lam = _normalized_forward(family, path, j + n_max)
        # adjoint direction at j from the far end
        nu = np.ones(family.dim) / family.dim
        for k in range(j + n_max - 1, j - 1, -1):
            v = family.at(k, path[k]).T @ nu
            nu = v / v.sum()
        nu_j = nu / float(nu @ h[j])
        prod = np.eye(family.dim)
        lam_run = 1.0
        for k in range(j, j + n_max):
            prod = family.at(k, path[k]) @ prod
            lam_run *= lam[k]
            n = k - j + 1
            if n in n_grid:
                target = np.outer(h[k + 1], nu_j)
                resid = np.abs(prod / lam_run - target).max()
                idx = n_grid.index(n)
                worst[idx] = max(worst[idx], resid)
    c, rate = fit_geometric(n_grid, worst)
    return RrpfCertificate(tuple(n_grid), tuple(worst), c, rate,
                           birkhoff_rate(family).rate)


@dataclass(frozen=True)
class LognormReport:
    sandwich_bound: float
    sandwich_max: float
    exhaustive: bool
    n_checked: int
    lambda_window: int
    tail_bound: float


def sandwich_constant(family: PositiveMatrixFamily, window: int, n: int) -> float:
    """Certified uniform bound for |log ||A_0^n||_max - S_n log F_{., window}|.

    Cone geometry: the max-entry norm and the summed functional differ by
    at most log d^2; window functionals sit within the Birkhoff-telescoped
    drift of the limit ones; the two boundary windows contribute at most
    window * log(d C^2) each.
    """
    bk = birkhoff_rate(family)
    d, c = family.dim, family.bound
    drift = bk.diameter / (1.0 - bk.rate)
    window_err = (n + window) * bk.diameter * bk.rate ** max(window - 2, 0)
    boundary = 2.0 * window * math.log(d * c * c) + 2.0 * math.log(d)
    return boundary + drift + window_err


def lognorm_sandwich(family: PositiveMatrixFamily, chain: ChainSpec,
                     pf: SequentialPfData, n: int,
                     n_paths: int = 64, seed: int = 0,
                     exhaustive_limit: int = 1 << 21) -> LognormReport:
    """Verify |log ||A_0^n||_max - sum_j log lambda_j| <= certified K.

    Exhausts all paths when feasible (the log-norm reduction must hold
    pointwise), otherwise uses seeded samples.
    """
    w = pf.window
    length = n + w + 1
    if length > chain.horizon + 1:
        raise ModelError("horizon too short for the sandwich check")
    sizes = [chain.size(i) for i in range(length)]
    total = int(np.prod(sizes))
    exhaustive = total <= exhaustive_limit
    if exhaustive:
        paths = np.stack(np.unravel_index(np.arange(total), sizes), axis=1)
    else:
        from markovllt.sim import sample_paths
        paths = sample_paths(chain, n_paths, seed).paths[:, :length]

    d = family.dim
    stacks = [np.stack(family.maps[k]) for k in range(n + w)]
    n_p = len(paths)
    prod = np.broadcast_to(np.eye(d), (n_p, d, d)).copy()
    s_log = np.zeros(n_p)
    for k in range(n):
        mk = stacks[k][paths[:, k]]
        prod = np.einsum("pij,pjk->pik", mk, prod)
        top = np.ones((n_p, d))
        for off in range(0, w + 1):
            m = stacks[k + off][paths[:, k + off]]
            top = np.einsum("pij,pj->pi", m, top)
        bot = np.ones((n_p, d))
        for off in range(1, w + 1):
            m = stacks[k + off][paths[:, k + off]]
            bot = np.einsum("pij,pj->pi", m, bot)
        s_log += np.log(top.sum(axis=1) / bot.sum(axis=1))
    gaps = np.abs(np.log(np.abs(prod).max(axis=(1, 2))) - s_log)
    worst = float(gaps.max())
    bound = sandwich_constant(family, w, n)
    return LognormReport(sandwich_bound=bound, sandwich_max=worst,
                         exhaustive=exhaustive, n_checked=n_p,
                         lambda_window=w, tail_bound=pf.tail_bound)


# ---------------------------------------------------------------------------
# perturbative hyperbolic splittings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperbolicSplitting:
    base_eigenvalues: np.ndarray
    eps: float
    js: tuple[int, ...]
    lambdas: np.ndarray  # (len(js), dim)
    vectors: np.ndarray  # (len(js), dim, dim): vectors[j][:, i]
    residuals: np.ndarray
    sup_lambda_dev: np.ndarray  # per direction
    sup_vector_dev: np.ndarray


def _qr_flag(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Orthonormal flag aligned with the most-expanded directions of the
    ordered product (QR re-orthonormalisation each step)."""
    d = mats[0].shape[0]
    q = np.eye(d)
    for m in mats:
        q, r = np.linalg.qr(m @ q)
        q = q * np.sign(np.diag(r))[None, :]
    return q


def _intersect_lines(basis_a: np.ndarray, basis_b: np.ndarray,
                     cond_tol: float = 1e-8) -> np.ndarray:
    """One-dimensional intersection of two subspaces given by orthonormal bases."""
    stacked = np.concatenate([basis_a, -basis_b], axis=1)
    _, s, vt = np.linalg.svd(stacked)
    if s.size >= min(stacked.shape) and s[-1] > cond_tol:
        raise ModelError(
            f"subspace intersection ill conditioned: smallest singular value "
            f"{s[-1]:.3e} exceeds {cond_tol}")
    coeff = vt[-1, : basis_a.shape[1]]
    v = basis_a @ coeff
    nrm = np.linalg.norm(v)
    if nrm < 1e-12:
        raise ModelError("degenerate intersection in the splitting")
    return v / nrm


def lyapunov_splitting(base: np.ndarray, deviations: Sequence[np.ndarray],
                       eps: float, window: int,
                       gap_fraction: float = 0.25) -> HyperbolicSplitting:
    """Sequential eigenvalue/direction tracking for A_j = base + eps * dev_j.

    Directions come from finite-window flag intersections: the i-th one is
    the meet of the forward slow filtration (span of the i most contracted
    directions of the window product ahead) and the backward fast
    filtration (span of the d-i+1 most expanded directions of the window
    product behind).  The one-step relation then yields lambda_{j,i} and a
    residual that decays geometrically in the window.
    """
    base = np.asarray(base, dtype=float)
    d = base.shape[0]
    evals, evecs = np.linalg.eig(base)
    if np.abs(evals.imag).max() > 1e-12:
        raise ModelError("base matrix must have real eigenvalues")
    evals = evals.real
    order = np.argsort(evals)
    evals = evals[order]
    evecs = evecs.real[:, order]
    evecs /= np.linalg.norm(evecs, axis=0)
    gaps = np.diff(evals)
    if np.min(np.abs(gaps)) <= 0:
        raise ModelError("base eigenvalues must be distinct")
    dev_norms = [float(np.linalg.norm(m, 2)) for m in deviations]
    if eps * max(dev_norms, default=0.0) > gap_fraction * float(np.min(np.abs(gaps))):
        raise ModelError(
            f"perturbation size {eps * max(dev_norms):.3g} exceeds "
            f"{gap_fraction} of the spectral gap {float(np.min(np.abs(gaps))):.3g}")

    mats = [base + eps * np.asarray(m, dtype=float) for m in deviations]
    L = len(mats)
    if L < 2 * window + 2:
        raise ModelError("need at least 2*window+2 perturbation steps")
    js = list(range(window, L - window))
    vecs = np.zeros((len(js) + 1, d, d))

    def directions(j: int) -> np.ndarray:
        back = _qr_flag(mats[j - window:j])              # expanding flag at j
        # the slow flag at j is the dominant flag of the inverse product,
        # applied from the far end of the forward window back to j
        inv = [np.linalg.inv(mats[m]) for m in range(j + window - 1, j - 1, -1)]
        fwd = _qr_flag(inv)
        out = np.zeros((d, d))
        for i in range(1, d + 1):
            # S_i = span(fwd[:, :i]); E_{d-i+1} = span(back[:, :d-i+1])
            if i == 1:
                v = fwd[:, 0]
            elif i == d:
                v = back[:, 0]
            else:
                v = _intersect_lines(fwd[:, :i], back[:, :d - i + 1])
            if v @ evecs[:, i - 1] < 0:
                v = -v
            out[:, i - 1] = v
        return out

    for idx, j in enumerate(js):
        vecs[idx] = directions(j)
    vecs[len(js)] = directions(js[-1] + 1)

    lambdas = np.zeros((len(js), d))
    residuals = np.zeros((len(js), d))
    for idx, j in enumerate(js):
        for i in range(d):
            img = mats[j] @ vecs[idx][:, i]
            lam = float(vecs[idx + 1][:, i] @ img)
            lambdas[idx, i] = lam
            residuals[idx, i] = float(np.linalg.norm(img - lam * vecs[idx + 1][:, i]))
    sup_lam = np.abs(lambdas - evals[None, :]).max(axis=0)
    sup_vec = np.array([
        np.linalg.norm(vecs[:len(js), :, i] - evecs[:, i][None, :], axis=1).max()
        for i in range(d)
    ])
    return HyperbolicSplitting(
        base_eigenvalues=evals, eps=eps, js=tuple(js), lambdas=lambdas,
        vectors=vecs[:len(js)], residuals=residuals,
        sup_lambda_dev=sup_lam, sup_vector_dev=sup_vec)


@dataclass(frozen=True)
class EpsGridStudy:
    eps_values: tuple[float, ...]
    lambda_devs: tuple[float, ...]
    vector_devs: tuple[float, ...]
    linear_within_factor: float  # max over grid of (dev/eps) / min of (dev/eps)


def eps_grid_study(base: np.ndarray, deviations: Sequence[np.ndarray],
                   eps_values: Sequence[float], window: int) -> EpsGridStudy:
    """Deviation-vs-eps curve: first-order shrinkage of the splitting."""
    lam_devs, vec_devs = [], []
    for eps in eps_values:
        sp = lyapunov_splitting(base, deviations, eps, window)
        lam_devs.append(float(sp.sup_lambda_dev.max()))
        vec_devs.append(float(sp.sup_vector_dev.max()))
    ratios = [ld / e for ld, e in zip(lam_devs, eps_values) if e > 0]
    factor = max(ratios) / min(ratios) if ratios else math.nan
    return EpsGridStudy(tuple(eps_values), tuple(lam_devs), tuple(vec_devs), factor)
