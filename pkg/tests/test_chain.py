import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from markovllt.chain import (
    ChainSpec,
    ModelError,
    ZeroMarginalError,
    backward_kernel,
    backward_kernels,
    dobrushin_coefficient,
    empirical_reverse_phi,
    propagate_marginals,
    rederive_forward,
    reverse_phi_bound,
    validate_assumptions,
    window_law,
)
from _oracles import enumerate_paths, oracle_conditional_past, random_instance
from conftest import fair_coin, reversible_chain


def bayes_chain(n=3):
    k = np.array([[0.9, 0.1], [0.2, 0.8]])
    return ChainSpec.repeating(n, [k], np.array([0.5, 0.5]), 0.5)


class TestMarginals:
    def test_identity_kernel(self):
        c = ChainSpec((("0", "1"),) * 2, (np.eye(2),), np.array([1.0, 0.0]), 0.5,
                      degenerate_ok=True)
        with pytest.raises(ZeroMarginalError):
            propagate_marginals(c, require_positive=True)
        mus = propagate_marginals(c)
        assert np.allclose(mus[1], [1.0, 0.0])

    def test_hand_product(self):
        mus = propagate_marginals(bayes_chain())
        assert np.allclose(mus[1], [0.55, 0.45], atol=1e-15)

    def test_doubly_stochastic_uniform(self):
        k = np.array([[0.3, 0.7], [0.7, 0.3]])
        c = ChainSpec.repeating(5, [k], np.array([0.5, 0.5]), 0.5)
        for mu in propagate_marginals(c):
            assert np.allclose(mu, 0.5, atol=1e-13)


class TestBackward:
    def test_iid_uniform(self):
        c = fair_coin(4)
        for j in range(4):
            bk = backward_kernel(c, j)
            assert np.allclose(bk.matrix, 0.5, atol=1e-14)

    def test_bayes_rule(self):
        bk = backward_kernel(bayes_chain(), 0)
        assert np.allclose(bk.matrix[0], [9 / 11, 2 / 11], atol=1e-14)

    def test_reversible_equals_forward(self):
        c = reversible_chain(6)
        for j in range(6):
            bk = backward_kernel(c, j)
            assert np.allclose(bk.matrix, c.kernels[j], atol=1e-13)

    def test_bayes_identity(self):
        c = bayes_chain()
        mus = propagate_marginals(c)
        bk = backward_kernel(c, 1, mus)
        lhs = mus[1][None, :].T * c.kernels[1]            # mu_j(b) p_j(b,x)
        rhs = bk.matrix.T * mus[2][None, :]               # B[x][b] mu_{j+1}(x)
        assert np.abs(lhs - rhs).max() <= 1e-12

    def test_marginal_flow_roundtrip(self):
        c = bayes_chain()
        for j in range(c.horizon):
            assert np.abs(rederive_forward(c, j) - c.kernels[j]).max() <= 1e-12


class TestDobrushin:
    def test_equal_rows(self):
        bk = backward_kernel(fair_coin(3), 1)
        assert dobrushin_coefficient(bk) == 0.0

    def test_direct_tv(self):
        from markovllt.chain import BackwardKernel
        bk = BackwardKernel(0, np.array([[0.9, 0.1], [0.2, 0.8]]))
        assert dobrushin_coefficient(bk) == pytest.approx(0.7, abs=1e-15)

    def test_disjoint_supports(self):
        from markovllt.chain import BackwardKernel
        bk = BackwardKernel(0, np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert dobrushin_coefficient(bk) == 1.0


class TestAssumptions:
    def test_iid_uniform(self):
        rep = validate_assumptions(fair_coin(5))
        assert rep.delta == 0.0 and rep.zeta == pytest.approx(0.5)
        assert rep.cond_constant == pytest.approx(1.0)
        assert rep.pass_contraction and rep.pass_ellipticity and rep.pass_cond

    def test_deterministic_step_fails(self):
        kernels = [np.array([[0.5, 0.5], [0.5, 0.5]]), np.eye(2),
                   np.array([[0.5, 0.5], [0.5, 0.5]])]
        c = ChainSpec((("0", "1"),) * 4, tuple(kernels), np.array([0.5, 0.5]), 0.5)
        rep = validate_assumptions(c)
        assert rep.zeta == 0.0 and not rep.pass_ellipticity
        assert rep.failing_step == 1

    def test_floor_chain(self):
        rng = np.random.default_rng(5)
        floor = 0.1
        kernels = []
        for _ in range(6):
            raw = rng.random((3, 3))
            raw = floor + raw / raw.sum(axis=1, keepdims=True) * (1 - 3 * floor)
            kernels.append(raw)
        c = ChainSpec((tuple(range(3)),) * 7, tuple(kernels), np.full(3, 1 / 3), 0.5)
        rep = validate_assumptions(c)
        mus = propagate_marginals(c)
        lower = floor * min(m.min() for m in mus) / max(m.max() for m in mus)
        assert rep.pass_ellipticity and rep.zeta >= lower - 1e-12

    def test_short_horizon_rejected(self):
        c = ChainSpec((("0", "1"),) * 2, (np.full((2, 2), 0.5),),
                      np.array([0.5, 0.5]), 0.5)
        with pytest.raises(ModelError):
            validate_assumptions(c)


class TestMixing:
    def test_iid_bound_zero(self):
        rep = validate_assumptions(fair_coin(6))
        assert reverse_phi_bound(rep, 3) == 0.0
        assert empirical_reverse_phi(fair_coin(6), 2) <= 1e-14

    def test_arithmetic(self):
        rep = validate_assumptions(reversible_chain(6))
        assert reverse_phi_bound(rep, 3) == pytest.approx(0.7 ** 3)

    def test_enumerated_vs_bound(self):
        c = bayes_chain(6)
        rep = validate_assumptions(c)
        phi2 = empirical_reverse_phi(c, 2)
        assert phi2 <= 0.49
        assert phi2 <= rep.delta ** 2 + 1e-12

    def test_monotone_in_gap(self):
        c = bayes_chain(7)
        rep = validate_assumptions(c)
        values = [empirical_reverse_phi(c, n) for n in range(1, 6)]
        for n, (a, b) in enumerate(zip(values, values[1:]), start=1):
            assert b <= a + 1e-12
            assert a <= rep.delta ** n + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_bayes_consistency_random(seed):
    rng = np.random.default_rng(seed)
    chain, _ = random_instance(rng, n_max=6, s_max=4)
    j = int(rng.integers(0, chain.horizon - 1))
    g = rng.uniform(-1, 1, chain.size(j))
    bk = backward_kernel(chain, j)
    expected = bk.matrix @ g
    brute = oracle_conditional_past(chain, j, g)
    assert np.abs(expected - brute).max() <= 1e-12


def test_window_law_matches_enumeration():
    c = bayes_chain(5)
    paths, probs = enumerate_paths(c)
    law = window_law(c, 1, 3)
    brute = np.zeros_like(law)
    np.add.at(brute, (paths[:, 1], paths[:, 2], paths[:, 3]), probs)
    assert np.abs(law - brute).max() <= 1e-14


class TestValidation:
    def test_bad_rows_rejected(self):
        with pytest.raises(ModelError):
            ChainSpec((("0", "1"),) * 2, (np.array([[0.6, 0.6], [0.5, 0.5]]),),
                      np.array([0.5, 0.5]), 0.5)

    def test_bad_initial_rejected(self):
        with pytest.raises(ModelError):
            ChainSpec((("0", "1"),) * 2, (np.full((2, 2), 0.5),),
                      np.array([0.6, 0.5]), 0.5)

    def test_singleton_needs_flag(self):
        with pytest.raises(ModelError):
            ChainSpec((("0",), ("0", "1")), (np.array([[0.5, 0.5]]),),
                      np.array([1.0]), 0.5)
        ChainSpec((("0",), ("0", "1")), (np.array([[0.5, 0.5]]),),
                  np.array([1.0]), 0.5, degenerate_ok=True)

    def test_repeating_expansion(self):
        k1 = np.full((2, 2), 0.5)
        k2 = np.array([[0.9, 0.1], [0.2, 0.8]])
        c = ChainSpec.repeating(5, [k1, k2], np.array([0.5, 0.5]), 0.5)
        assert c.horizon == 5
        assert np.array_equal(c.kernels[2], k1) and np.array_equal(c.kernels[3], k2)

    def test_zero_marginal_names_state(self):
        kernels = [np.array([[1.0, 0.0], [1.0, 0.0]]), np.full((2, 2), 0.5)]
        c = ChainSpec((("a", "b"),) * 3, tuple(kernels), np.array([0.5, 0.5]), 0.5)
        with pytest.raises(ZeroMarginalError) as exc:
            backward_kernels(c)
        assert "'b'" in str(exc.value) and exc.value.j == 1
