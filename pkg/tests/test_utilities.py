import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convexpg import PolicyParams, UtilitySpec, occupancy_exact
from convexpg.envs import random_mdp
from convexpg.errors import InvalidSpec, MissingField

from conftest import utilities_for


def directional_fd(u, mu, v, h=1e-6):
    return (u.value(mu + h * v) - u.value(mu - h * v)) / (2 * h)


class TestValue:
    def test_linear_zero_reward(self):
        assert UtilitySpec.linear(np.zeros((2, 2))).value(np.ones((2, 2))) == 0.0

    def test_linear_sign(self):
        assert UtilitySpec.linear([[2.0]]).value(np.array([[3.0]])) == -6.0

    def test_apprenticeship_at_expert(self):
        mu = np.array([[3.0, 2.0], [4.0, 1.0]])
        assert UtilitySpec.apprenticeship(mu).value(mu) == 0.0

    def test_entropy_scalar(self):
        assert UtilitySpec.neg_entropy().value(np.array([[10.0]])) == pytest.approx(10 * math.log(10), abs=1e-12)
        assert 10 * math.log(10) == pytest.approx(23.0259, abs=1e-4)

    def test_entropy_finite_at_zero(self):
        u = UtilitySpec.neg_entropy()
        mu = np.array([[0.0, 10.0]])
        assert np.isfinite(u.value(mu))
        assert np.all(np.isfinite(u.gradient(mu)))

    def test_accepts_occupancy_measure(self, mdp53, theta53):
        occ = occupancy_exact(mdp53, theta53)
        u = UtilitySpec.neg_entropy()
        assert u.value(occ) == u.value(occ.state_action)


class TestGradient:
    def test_linear_constant(self):
        R = np.array([[1.0, -2.0]])
        u = UtilitySpec.linear(R)
        np.testing.assert_array_equal(u.gradient(np.zeros((1, 2))), -R)
        np.testing.assert_array_equal(u.gradient(np.full((1, 2), 7.0)), -R)

    def test_apprenticeship_stationary(self):
        mu = np.array([[3.0, 2.0]])
        np.testing.assert_array_equal(UtilitySpec.apprenticeship(mu).gradient(mu), 0.0)

    def test_entropy_scalar(self):
        g = UtilitySpec.neg_entropy().gradient(np.array([[10.0]]))
        assert g[0, 0] == pytest.approx(math.log(10) + 1, abs=1e-12)
        assert g[0, 0] == pytest.approx(3.3026, abs=1e-4)

    @pytest.mark.parametrize("kind", ["linear", "neg_entropy", "apprenticeship_l2"])
    def test_entry_matches_vector(self, mdp53, theta53, kind):
        u = utilities_for(mdp53)[kind]
        mu = occupancy_exact(mdp53, theta53).state_action
        full = u.gradient(mu)
        for s in range(5):
            for a in range(3):
                assert u.gradient_entry(s, a, mu[s, a]) == pytest.approx(full[s, a], abs=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["linear", "neg_entropy", "apprenticeship_l2"]))
    def test_directional_derivative(self, seed, kind):
        mdp = random_mdp(4, 3, 0.9, seed=seed % 97)
        mu = occupancy_exact(mdp, PolicyParams.random(mdp, seed)).state_action
        u = utilities_for(mdp, seed=3)[kind]
        v = np.random.default_rng(seed).normal(size=mu.shape)
        assert abs(directional_fd(u, mu, v) - np.sum(u.gradient(mu) * v)) <= 1e-6


class TestSpec:
    def test_missing_reward(self):
        with pytest.raises(MissingField):
            UtilitySpec("linear").value(np.ones((1, 1)))

    def test_missing_expert(self):
        with pytest.raises(MissingField):
            UtilitySpec("apprenticeship_l2").gradient(np.ones((1, 1)))

    def test_unknown_kind(self):
        with pytest.raises(InvalidSpec):
            UtilitySpec("kl")

    def test_clamp_floor_positive(self):
        with pytest.raises(InvalidSpec):
            UtilitySpec.neg_entropy(0.0)

    def test_expert_mass_checked(self):
        with pytest.raises(InvalidSpec):
            UtilitySpec.apprenticeship(np.ones((2, 2))).check(gamma=0.9)

    def test_json_roundtrip(self):
        u = UtilitySpec.apprenticeship(np.full((2, 2), 2.5))
        back = UtilitySpec.from_dict(u.to_dict())
        assert back.kind == u.kind
        np.testing.assert_array_equal(back.expert_occupancy, u.expert_occupancy)
        assert back.clamp_floor == 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_apprenticeship_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        mu, mu_e = rng.random((3, 2)), rng.random((3, 2))
        u = UtilitySpec.apprenticeship(mu_e)
        assert u.value(mu) > 0
        assert u.value(mu_e) == 0
