"""Numerical local-limit-theorem machinery for inhomogeneous finite-state Markov chains.

The library models time-varying finite-state Markov chains through their
backward (future-conditioned) kernels, builds twisted transfer-operator
cocycles on window-function spaces, and verifies local central limit
theorems, Edgeworth expansions, corange/lattice structure, and the
positive-matrix-product and iterated-random-function applications against
exact small-instance oracles.
"""

from markovllt.chain import (
    AssumptionReport,
    BackwardKernel,
    ChainSpec,
    ModelError,
    ZeroMarginalError,
    backward_kernel,
    backward_kernels,
    dobrushin_coefficient,
    empirical_reverse_phi,
    propagate_marginals,
    reverse_phi_bound,
    validate_assumptions,
    window_law,
)
from markovllt.observables import (
    Decomposition,
    NormData,
    WindowObservable,
    anchor_coboundary,
    anchor_residual_curve,
    build_linear_process,
    gordin_decomposition,
    norm_data,
    sinai_reduce,
    variation,
)
from markovllt.transfer import (
    RpfTriple,
    StarNormParams,
    TwistedCocycle,
    build_twisted,
    complex_rpf,
    compose,
    contracting_blocks,
    lasota_yorke_check,
    norm_estimate,
    rpf_decay,
    star_params,
)
from markovllt.llt import (
    CorangeResult,
    LatticeDistribution,
    LltReport,
    MomentData,
    char_function,
    corange_scan,
    edgeworth_check,
    exact_moments,
    lattice_distribution,
    lattice_llt_check,
    nonlattice_llt_check,
    small_t_gaussian_bound,
    suff_integral,
    two_sided_llt,
    variance_regime,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
