"""Inhomogeneous finite-state Markov chains and their backward structure.

A chain is a finite horizon of finite state spaces joined by row-stochastic
forward kernels.  All limit-theorem machinery in this package conditions on
the future, so the central derived objects are the backward kernels
B_j[x][b] = P(X_j = b | X_{j+1} = x), their Dobrushin contraction
coefficients, and the uniform ellipticity floor of their entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12


class ModelError(ValueError):
    """Invalid chain or observable data."""


class ZeroMarginalError(ModelError):
    """A propagated marginal vanished, so backward kernels do not exist."""

    def __init__(self, j: int, state: Any):
        self.j = j
        self.state = state
        super().__init__(f"marginal at time {j} vanishes on state {state!r}")


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ChainSpec:
    """Finite-horizon inhomogeneous chain.

    states[j] lists the labels of the j-th state space (N+1 spaces for a
    horizon of N steps), kernels[j] is the row-stochastic matrix from
    states[j] to states[j+1], initial is the law of the first coordinate,
    and ``a`` is the geometric weight of the dynamical distance
    a**(first index of disagreement).
    """

    states: tuple[tuple[Any, ...], ...]
    kernels: tuple[np.ndarray, ...]
    initial: np.ndarray
    a: float
    degenerate_ok: bool = field(default=False)

    def __post_init__(self):
        states = tuple(tuple(s) for s in self.states)
        kernels = tuple(_as_readonly(k) for k in self.kernels)
        initial = _as_readonly(self.initial)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "initial", initial)
        if len(states) < 2:
            raise ModelError("need at least two state spaces (one step)")
        if len(kernels) != len(states) - 1:
            raise ModelError("expected one kernel per step")
        if not (0.0 < self.a < 1.0):
            raise ModelError("dynamical-distance weight a must lie in (0, 1)")
        for j, space in enumerate(states):
            if len(space) == 0:
                raise ModelError(f"state space {j} is empty")
            if len(space) == 1 and not self.degenerate_ok:
                raise ModelError(
                    f"state space {j} has a single state; pass degenerate_ok=True"
                )
        for j, k in enumerate(kernels):
            if k.shape != (len(states[j]), len(states[j + 1])):
                raise ModelError(f"kernel {j} has shape {k.shape}, expected "
                                 f"({len(states[j])}, {len(states[j + 1])})")
            if np.any(k < -STOCHASTIC_TOL):
                raise ModelError(f"kernel {j} has negative entries")
            rows = k.sum(axis=1)
            if np.max(np.abs(rows - 1.0)) > STOCHASTIC_TOL:
                raise ModelError(f"kernel {j} rows do not sum to 1 within "
                                 f"{STOCHASTIC_TOL}")
        if initial.shape != (len(states[0]),):
            raise ModelError("initial law has wrong length")
        if np.any(initial < -STOCHASTIC_TOL):
            raise ModelError("initial law has negative entries")
        if abs(initial.sum() - 1.0) > STOCHASTIC_TOL:
            raise ModelError(f"initial law does not sum to 1 within {STOCHASTIC_TOL}")

    @property
    def horizon(self) -> int:
        """Number of time steps N (there are N+1 state spaces)."""
        return len(self.kernels)

    def size(self, j: int) -> int:
        return len(self.states[j])

    @classmethod
    def repeating(cls, n_steps: int, block: Sequence[np.ndarray],
                  initial: np.ndarray, a: float,
                  states: Sequence[Sequence[Any]] | None = None) -> "ChainSpec":
        """Expand a repeating kernel block into an explicit horizon.

        The block is cycled deterministically: kernel j is block[j % len(block)].
        All spaces must share the block's (square) dimension unless given.
        """
        block = [np.asarray(b, dtype=float) for b in block]
        if n_steps < 1:
            raise ModelError("need at least one step")
        kernels = [block[j % len(block)] for j in range(n_steps)]
        if states is None:
            d = block[0].shape[0]
            for b in block:
                if b.shape != (d, d):
                    raise ModelError("repeating blocks must be square and same size")
            states = [tuple(range(d))] * (n_steps + 1)
        return cls(tuple(tuple(s) for s in states), tuple(kernels),
                   np.asarray(initial, dtype=float), a)


@dataclass(frozen=True)
class BackwardKernel:
    """Future-conditioned one-step kernel at time j.

    matrix[x][b] = P(X_j = b | X_{j+1} = x); rows are indexed by states of
    X_{j+1} and are probability vectors.
    """

    j: int
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _as_readonly(self.matrix))


@dataclass(frozen=True)
class AssumptionReport:
    """Computed contraction/ellipticity diagnostics for a chain.

    delta is the worst backward Dobrushin coefficient, zeta the minimal
    backward transition probability (one-step ellipticity, block length
    n0 = 1), and cond_constant the uniform bound C with
    P(X_j in G | X_{j-1} = x) <= C * P(X_j in G).
    """

    delta: float
    zeta: float
    n0: int
    pi: tuple[float, ...]
    cond_constant: float
    pass_contraction: bool
    pass_ellipticity: bool
    pass_cond: bool
    failing_step: int | None = None


def propagate_marginals(chain: ChainSpec, require_positive: bool = False) -> list[np.ndarray]:
    """Forward marginals mu_0..mu_N via repeated vector-kernel products."""
    out = [np.array(chain.initial)]
    for k in chain.kernels:
        out.append(out[-1] @ k)
    for mu in out:
        s = mu.sum()
        if abs(s - 1.0) > 1e-11:
            raise ModelError("marginal mass drifted; kernels are inconsistent")
    if require_positive:
        for j, mu in enumerate(out):
            bad = np.nonzero(mu <= 0.0)[0]
            if bad.size:
                raise ZeroMarginalError(j, chain.states[j][bad[0]])
    return out


def backward_kernel(chain: ChainSpec, j: int,
                    marginals: list[np.ndarray] | None = None) -> BackwardKernel:
    """Bayes inversion of step j: B_j[x][b] = mu_j(b) p_j(b,x) / mu_{j+1}(x)."""
    if not 0 <= j < chain.horizon:
        raise ModelError(f"step index {j} outside horizon {chain.horizon}")
    mus = marginals if marginals is not None else propagate_marginals(chain)
    mu_next = mus[j + 1]
    bad = np.nonzero(mu_next <= 0.0)[0]
    if bad.size:
        raise ZeroMarginalError(j + 1, chain.states[j + 1][bad[0]])
    mat = (mus[j][None, :] * chain.kernels[j].T) / mu_next[:, None]
    return BackwardKernel(j, mat)


def backward_kernels(chain: ChainSpec) -> list[BackwardKernel]:
    mus = propagate_marginals(chain, require_positive=True)
    return [backward_kernel(chain, j, mus) for j in range(chain.horizon)]


def dobrushin_coefficient(bk: BackwardKernel) -> float:
    """Worst total-variation distance between two rows of a backward kernel."""
    m = bk.matrix
    diff = np.abs(m[:, None, :] - m[None, :, :]).sum(axis=2)
    return 0.5 * float(diff.max())


def validate_assumptions(chain: ChainSpec, cond_cap: float = 1e6) -> AssumptionReport:
    """Contraction, ellipticity and conditional-domination diagnostics.

    delta = max_j pi_j with pi_j the backward Dobrushin coefficient,
    zeta = min entry over all backward kernels, and the conditional
    constant is max_{j,x,y} p_j(x,y) / mu_{j+1}(y).
    """
    if chain.horizon < 2:
        raise ModelError("horizon too short to classify (need at least 2 steps)")
    mus = propagate_marginals(chain, require_positive=True)
    pis = []
    zeta = np.inf
    failing = None
    for j in range(chain.horizon):
        bk = backward_kernel(chain, j, mus)
        pis.append(dobrushin_coefficient(bk))
        step_min = float(bk.matrix.min())
        if step_min < zeta:
            zeta = step_min
            if step_min <= 0.0:
                failing = j
    cond = 0.0
    for j, k in enumerate(chain.kernels):
        cond = max(cond, float((k / mus[j + 1][None, :]).max()))
    delta = float(max(pis))
    zeta = float(max(zeta, 0.0))
    return AssumptionReport(
        delta=delta,
        zeta=zeta,
        n0=1,
        pi=tuple(pis),
        cond_constant=cond,
        pass_contraction=delta < 1.0,
        pass_ellipticity=zeta > 0.0,
        pass_cond=cond <= cond_cap,
        failing_step=failing,
    )


def reverse_phi_bound(report: AssumptionReport, n: int) -> float:
    """Geometric mixing bound delta**n for the reverse phi coefficient."""
    if not report.pass_contraction:
        raise ModelError("contraction fails (delta >= 1); no mixing bound")
    if n < 1:
        raise ModelError("n must be positive")
    return report.delta ** n


def empirical_reverse_phi(chain: ChainSpec, n: int) -> float:
    """Exact reverse phi-mixing coefficient at gap n.

    phi_R(n) maximises |P(A|B) - P(A)| over past events A up to time k and
    future conditioning events B from time k+n on.  The supremum over B is
    attained on single future atoms, and by the Markov property only the
    first conditioning coordinate matters, so
    phi_R(n) = max_{k, x} TV( law(X_0..X_k | X_{k+n} = x), law(X_0..X_k) )
             = max_{k, x} 0.5 * sum_b mu_k(b) |M(b,x)/mu_{k+n}(x) - 1|
    with M the k..k+n forward product.
    """
    if n < 1:
        raise ModelError("n must be positive")
    mus = propagate_marginals(chain, require_positive=True)
    best = 0.0
    for k in range(chain.horizon - n + 1):
        m = chain.kernels[k]
        for step in range(k + 1, k + n):
            m = m @ chain.kernels[step]
        ratio = m / mus[k + n][None, :]
        tv = 0.5 * (mus[k][:, None] * np.abs(ratio - 1.0)).sum(axis=0)
        best = max(best, float(tv.max()))
    return best


def window_law(chain: ChainSpec, j: int, width: int,
               marginals: list[np.ndarray] | None = None) -> np.ndarray:
    """Joint law of (X_j, ..., X_{j+width-1}) as an array over window states."""
    if width < 1 or j < 0 or j + width - 1 > chain.horizon:
        raise ModelError(f"window [{j}, {j + width}) outside horizon")
    mus = marginals if marginals is not None else propagate_marginals(chain)
    law = np.array(mus[j])
    for step in range(j, j + width - 1):
        law = law[..., :, None] * chain.kernels[step]
    return law


def rederive_forward(chain: ChainSpec, j: int) -> np.ndarray:
    """Recover the forward kernel at step j from the backward one via Bayes."""
    mus = propagate_marginals(chain, require_positive=True)
    bk = backward_kernel(chain, j, mus)
    return bk.matrix.T * mus[j + 1][None, :] / mus[j][:, None]
