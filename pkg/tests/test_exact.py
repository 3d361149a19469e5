import numpy as np
import pytest

from convexpg import (
    PolicyParams,
    TabularMdp,
    UtilitySpec,
    discounted_operator,
    finite_diff_gradient,
    grad_check,
    occupancy_exact,
    occupancy_gradient,
    policy_gradient,
    policy_kernel,
    policy_probs,
    q_value,
)
from convexpg.envs import random_mdp
from convexpg.errors import SizeExceeded
from convexpg.exact import GradReport, occupancy_jacobian, pair_transition

from conftest import utilities_for


def rollout_occupancy(mdp, params, n_terms=400):
    """Truncated sum of discounted k-step state distributions."""
    K = policy_kernel(mdp, params)
    alpha = mdp.initial_dist.copy()
    d = np.zeros(mdp.n_states)
    for k in range(n_terms):
        d += mdp.gamma ** k * alpha
        alpha = K.T @ alpha
    return d[:, None] * policy_probs(params)


def series_beta(mdp, params, n_terms=400):
    M = pair_transition(mdp, params)
    term = np.eye(mdp.n_pairs)
    out = np.zeros_like(term)
    for _ in range(n_terms):
        out += term
        term = mdp.gamma * term @ M
    return out


def fd_occupancy(mdp, params, h=1e-5):
    """Central differences of every mu(s, a) in every theta coordinate: [s, a, s', b]."""
    theta = np.array(params.theta)
    S, A = theta.shape
    J = np.zeros((S, A, S, A))
    for idx in np.ndindex(theta.shape):
        tp, tm = theta.copy(), theta.copy()
        tp[idx] += h
        tm[idx] -= h
        J[:, :, idx[0], idx[1]] = (occupancy_exact(mdp, PolicyParams(tp)).state_action
                                   - occupancy_exact(mdp, PolicyParams(tm)).state_action) / (2 * h)
    return J


def absorbing_pair():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    return TabularMdp(2, 1, 0.5, P, np.array([1.0, 0.0]))


class TestOccupancy:
    def test_self_loop(self, self_loop):
        occ = occupancy_exact(self_loop, PolicyParams.uniform(self_loop))
        np.testing.assert_allclose(occ.state_action, [[10.0]], rtol=1e-14)

    def test_absorbing_chain(self):
        mdp = absorbing_pair()
        params = PolicyParams.uniform(mdp)
        occ = occupancy_exact(mdp, params)
        np.testing.assert_allclose(occ.state_marginal, [1.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(occ.state_action, rollout_occupancy(mdp, params, 200), atol=1e-12)

    def test_matches_rollout_oracle(self, mdp53, theta53):
        occ = occupancy_exact(mdp53, theta53)
        np.testing.assert_allclose(occ.state_action, rollout_occupancy(mdp53, theta53), atol=1e-10)

    def test_invariants(self, suite):
        for mdp, params in suite[::7]:
            occ = occupancy_exact(mdp, params)
            assert occ.state_action.min() >= 0
            assert abs(occ.total_mass - 1 / (1 - mdp.gamma)) <= 1e-8
            np.testing.assert_allclose(occ.state_action.sum(axis=1), occ.state_marginal, atol=1e-10)

    def test_gamma_zero(self, mdp53, theta53):
        mdp = TabularMdp(5, 3, 0.0, mdp53.transition, mdp53.initial_dist)
        occ = occupancy_exact(mdp, theta53)
        expected = mdp.initial_dist[:, None] * policy_probs(theta53)
        np.testing.assert_array_equal(occ.state_action, expected)


class TestDiscountedOperator:
    def test_gamma_zero_is_identity(self, mdp53, theta53):
        mdp = TabularMdp(5, 3, 0.0, mdp53.transition, mdp53.initial_dist)
        np.testing.assert_array_equal(discounted_operator(mdp, theta53).beta, np.eye(15))

    def test_scalar(self, self_loop):
        op = discounted_operator(self_loop, PolicyParams.uniform(self_loop))
        np.testing.assert_allclose(op.beta, [[10.0]], rtol=1e-14)

    def test_row_sums_and_residual(self):
        mdp = random_mdp(3, 2, 0.9, seed=4)
        params = PolicyParams.random(mdp, 8)
        op = discounted_operator(mdp, params)
        np.testing.assert_allclose(op.beta.sum(axis=1), 10.0, atol=1e-8)
        resid = (np.eye(6) - 0.9 * pair_transition(mdp, params)) @ op.beta - np.eye(6)
        assert np.abs(resid).max() <= 1e-8

    def test_matches_power_series(self, mdp53, theta53):
        np.testing.assert_allclose(discounted_operator(mdp53, theta53).beta,
                                   series_beta(mdp53, theta53), atol=1e-10)

    def test_size_guard(self):
        mdp = TabularMdp(4097, 1, 0.5, np.ones((1, 1, 1)), np.ones(1))
        with pytest.raises(SizeExceeded):
            discounted_operator(mdp, PolicyParams(np.zeros((4097, 1))))


class TestQValue:
    def test_gamma_zero(self, mdp53, theta53):
        mdp = TabularMdp(5, 3, 0.0, mdp53.transition, mdp53.initial_dist)
        R = np.arange(15.0)
        np.testing.assert_array_equal(q_value(discounted_operator(mdp, theta53), R), R)

    def test_self_loop(self, self_loop):
        op = discounted_operator(self_loop, PolicyParams.uniform(self_loop))
        np.testing.assert_allclose(q_value(op, [1.0]), [10.0], rtol=1e-14)

    def test_monte_carlo_oracle(self):
        mdp = random_mdp(4, 2, 0.9, seed=21)
        params = PolicyParams.random(mdp, 22)
        R = np.random.default_rng(23).normal(size=(4, 2))
        q = q_value(discounted_operator(mdp, params), R).reshape(4, 2)

        # 10^5 rollouts split evenly over the 8 start pairs, truncated at 200 steps
        rng = np.random.default_rng(24)
        per = 100_000 // 8
        s0 = np.repeat(np.arange(4), 2 * per)
        a0 = np.tile(np.repeat(np.arange(2), per), 4)
        pi_cdf = np.cumsum(policy_probs(params), axis=1)
        p_cdf = np.cumsum(mdp.transition, axis=2)
        s, a = s0.copy(), a0.copy()
        ret = np.zeros(len(s))
        for n in range(200):
            ret += 0.9 ** n * R[s, a]
            s = np.minimum((rng.random(len(s))[:, None] >= p_cdf[s, a]).sum(axis=1), 3)
            a = np.minimum((rng.random(len(s))[:, None] >= pi_cdf[s]).sum(axis=1), 1)
        for si in range(4):
            for ai in range(2):
                sel = (s0 == si) & (a0 == ai)
                mean, se = ret[sel].mean(), ret[sel].std(ddof=1) / np.sqrt(sel.sum())
                assert abs(mean - q[si, ai]) <= 3 * se


class TestOccupancyGradient:
    def test_gamma_zero_uniform(self):
        mdp = TabularMdp(1, 2, 0.0, np.ones((1, 2, 1)), np.ones(1))
        g = occupancy_gradient(mdp, PolicyParams(np.zeros((1, 2))), (0, 0))
        np.testing.assert_allclose(g, [[0.25, -0.25]], atol=1e-15)

    def test_total_mass_gradient_vanishes(self, mdp53, theta53):
        J = occupancy_jacobian(mdp53, theta53)
        assert np.abs(J.sum(axis=(0, 1))).max() <= 1e-8

    def test_matches_finite_differences(self, mdp53, theta53):
        J_fd = fd_occupancy(mdp53, theta53)
        for s in range(5):
            for a in range(3):
                g = occupancy_gradient(mdp53, theta53, (s, a))
                assert np.abs(g - J_fd[s, a]).max() <= 1e-6

    def test_slice_of_jacobian(self, mdp53, theta53):
        J = occupancy_jacobian(mdp53, theta53)
        np.testing.assert_allclose(occupancy_gradient(mdp53, theta53, (2, 1)), J[2, 1], atol=1e-14)

    def test_reversed_beta_orientation_disagrees_with_oracle(self, mdp53, theta53):
        # guards the (from, to) index convention: the transposed read is wrong
        op = discounted_operator(mdp53, theta53)
        pi = policy_probs(theta53)
        d = occupancy_exact(mdp53, theta53).state_marginal
        from convexpg.exact import softmax_jacobian

        W = d[:, None, None] * softmax_jacobian(pi)
        wrong = np.einsum("sapx,pxb->sapb", op.block(), W)
        assert np.abs(wrong - fd_occupancy(mdp53, theta53)).max() > 1e-3

    def test_out_of_bounds(self, mdp53, theta53):
        with pytest.raises(IndexError):
            occupancy_gradient(mdp53, theta53, (5, 0))


class TestPolicyGradient:
    def test_constant_utility(self, mdp53, theta53):
        g = policy_gradient(mdp53, theta53, UtilitySpec.constant(5, 3))
        np.testing.assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("kind", ["linear", "neg_entropy", "apprenticeship_l2"])
    def test_finite_difference_agreement(self, mdp53, theta53, kind):
        u = utilities_for(mdp53)[kind]
        g = policy_gradient(mdp53, theta53, u)
        fd = finite_diff_gradient(mdp53, theta53, u, 1e-5)
        assert np.abs(g - fd).max() <= 1e-6

    @pytest.mark.parametrize("kind", ["linear", "neg_entropy", "apprenticeship_l2"])
    def test_chain_rule_consistency(self, mdp53, theta53, kind):
        u = utilities_for(mdp53)[kind]
        R = u.gradient(occupancy_exact(mdp53, theta53))
        J = occupancy_jacobian(mdp53, theta53)
        chain = np.einsum("sa,sapb->pb", R, J)
        np.testing.assert_allclose(policy_gradient(mdp53, theta53, u), chain, atol=1e-8)

    def test_rows_in_softmax_tangent_space(self, suite):
        for mdp, params in suite[::9]:
            for u in utilities_for(mdp).values():
                g = policy_gradient(mdp, params, u)
                assert np.abs(g.sum(axis=1)).max() <= 1e-10


class TestFiniteDiff:
    def test_constant(self, mdp53, theta53):
        fd = finite_diff_gradient(mdp53, theta53, UtilitySpec.constant(5, 3))
        assert np.abs(fd).max() <= 1e-10

    def test_single_action(self, self_loop):
        fd = finite_diff_gradient(self_loop, PolicyParams.uniform(self_loop), UtilitySpec.linear([[1.0]]))
        np.testing.assert_array_equal(fd, 0.0)

    def test_step_must_be_positive(self, mdp53, theta53):
        with pytest.raises(ValueError):
            finite_diff_gradient(mdp53, theta53, UtilitySpec.neg_entropy(), 0.0)


class TestGradCheck:
    def test_constant(self, mdp53, theta53):
        rep = grad_check(mdp53, theta53, UtilitySpec.constant(5, 3), 1e-5)
        assert rep.max_abs_err <= 1e-10

    @pytest.mark.parametrize("kind", ["linear", "neg_entropy"])
    def test_report(self, mdp53, theta53, kind):
        rep = grad_check(mdp53, theta53, utilities_for(mdp53)[kind], 1e-5)
        assert isinstance(rep, GradReport)
        assert rep.analytic.shape == rep.numeric.shape == (5, 3)
        assert rep.max_abs_err == np.abs(rep.analytic - rep.numeric).max()
        assert rep.max_abs_err <= 1e-6
        doc = rep.to_dict()
        assert set(doc) >= {"max_abs_err", "max_rel_err", "fd_step", "analytic", "numeric"}
        assert len(doc["analytic"]) == 15
