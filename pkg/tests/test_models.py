import numpy as np
import pytest

from orthoflow import (
    Condition,
    ConditionalFamily,
    GaussianMixture,
    Token,
    VelocityModel,
    cfg_velocity,
)
from orthoflow.models import ConfigurationError

from conftest import two_mode_family


def cosine(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


class TestCondition:
    def test_mask_defaults_to_all_visible(self):
        c = Condition.of(1, 4)
        assert c.unmasked_ids() == (1, 4)

    def test_with_masked_hides_ids(self):
        c = Condition.of(1, 4).with_masked([4])
        assert c.unmasked_ids() == (1,)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            Condition((Token(1), Token(1)))

    def test_role_validation(self):
        with pytest.raises(ValueError):
            Token(1, role="verb")


class TestConditionalFamily:
    def test_empty_condition_is_prior(self, family):
        assert family.conditional(()) is family.majority_prior

    def test_unknown_token_raises(self, family):
        with pytest.raises(ConfigurationError):
            family.conditional((99,))

    def test_concat_renormalizes(self):
        g1 = GaussianMixture([[0.0]], [[1.0]], [1.0])
        g2 = GaussianMixture([[5.0]], [[1.0]], [1.0])
        fam = ConditionalFamily({1: g1, 2: g2}, g1)
        mix = fam.conditional((1, 2))
        assert mix.n_components == 2
        assert np.allclose(mix.weights, [0.5, 0.5])

    def test_dimension_mismatch_rejected(self):
        g1 = GaussianMixture([[0.0]], [[1.0]], [1.0])
        g2 = GaussianMixture([[0.0, 0.0]], [[1.0, 1.0]], [1.0])
        with pytest.raises(ValueError):
            ConditionalFamily({1: g2}, g1)


class TestEffectiveMixture:
    def test_beta_zero_is_conditional(self, family, minority_condition):
        model = VelocityModel(family, beta=0.0)
        mix = model.effective_mixture(minority_condition)
        cond = family.conditional((1,))
        assert np.array_equal(mix.means, cond.means)
        assert np.array_equal(mix.weights, cond.weights)

    def test_beta_one_is_prior(self, family, minority_condition):
        model = VelocityModel(family, beta=1.0)
        assert model.effective_mixture(minority_condition) is family.majority_prior

    def test_derived_minority_weight(self):
        # beta=0.5 on a 1-component conditional vs a 0.95/0.05 prior:
        # minority mass = 0.5*1 + 0.5*0.05 = 0.525, majority = 0.475.
        fam = two_mode_family(minority_w=0.05)
        model = VelocityModel(fam, beta=0.5)
        mix = model.effective_mixture(Condition.of(1))
        assert mix.weights[0] == pytest.approx(0.5)  # conditional block
        assert np.allclose(mix.weights[1:], [0.5 * 0.95, 0.5 * 0.05])

    def test_fully_masked_condition_resolves_to_prior(self, family):
        c = Condition.of(1).with_masked([1])
        model = VelocityModel(family, beta=0.0)
        assert model.effective_mixture(c) is family.majority_prior

    def test_beta_bounds(self, family):
        with pytest.raises(ValueError):
            VelocityModel(family, beta=1.5)
        with pytest.raises(ValueError):
            VelocityModel(family, omega=-0.1)


class TestEvaluate:
    def test_deterministic_when_omega_zero(self, family, minority_condition, rng):
        model = VelocityModel(family, beta=0.3)
        x = rng.standard_normal(2)
        a = model.evaluate(x, 0.5, minority_condition)
        b = model.evaluate(x, 0.5, minority_condition)
        assert np.array_equal(a, b)

    def test_omega_noise_is_seeded(self, family, minority_condition):
        model = VelocityModel(family, beta=0.0, omega=0.2, label="student")
        x = np.zeros(2)
        a = model.evaluate(x, 0.5, minority_condition, rng=np.random.default_rng(7))
        b = model.evaluate(x, 0.5, minority_condition, rng=np.random.default_rng(7))
        c = model.evaluate(x, 0.5, minority_condition, rng=np.random.default_rng(8))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_omega_requires_rng(self, family, minority_condition):
        model = VelocityModel(family, beta=0.0, omega=0.2)
        with pytest.raises(ValueError):
            model.evaluate(np.zeros(2), 0.5, minority_condition)

    def test_bias_pulls_toward_majority(self, family, minority_condition):
        # At high t near the origin, a heavily biased teacher's field
        # should align better with the majority direction than a clean
        # student's.
        x = np.array([0.0, 0.0])
        t = 0.9
        maj_dir = np.array([-2.0, 0.0])
        biased = VelocityModel(family, beta=0.95).evaluate(x, t, minority_condition)
        clean = VelocityModel(family, beta=0.0).evaluate(x, t, minority_condition)
        assert cosine(biased, maj_dir) > cosine(clean, maj_dir)
        assert cosine(clean, np.array([0.0, 3.0])) > 0.99

    def test_bias_monotone_in_beta(self, family, minority_condition):
        # Distance from the clean conditional field grows with beta.
        x = np.array([0.3, 0.1])
        t = 0.8
        clean = VelocityModel(family, beta=0.0).evaluate(x, t, minority_condition)
        gaps = [
            np.linalg.norm(
                VelocityModel(family, beta=b).evaluate(x, t, minority_condition)
                - clean
            )
            for b in (0.0, 0.3, 0.6, 0.9)
        ]
        assert all(g2 > g1 for g1, g2 in zip(gaps, gaps[1:]))

    def test_masking_equivalence(self, family):
        # Evaluating with a masked token equals evaluating the reduced
        # condition outright.
        fam = two_mode_family()
        model = VelocityModel(fam, beta=0.0)
        x = np.array([0.4, -0.2])
        masked = Condition.of(1).with_masked([1])
        bare = Condition.of()
        assert np.array_equal(
            model.evaluate(x, 0.6, masked), model.evaluate(x, 0.6, bare)
        )


class TestCfgVelocity:
    def test_gamma_zero_is_uncond(self, rng):
        vc, vu = rng.standard_normal((2, 4))
        assert np.array_equal(cfg_velocity(vc, vu, 0.0), vu)

    def test_gamma_one_is_cond(self, rng):
        vc, vu = rng.standard_normal((2, 4))
        assert np.allclose(cfg_velocity(vc, vu, 1.0), vc)

    def test_extrapolation(self):
        vc = np.array([2.0, 0.0])
        vu = np.array([1.0, 0.0])
        assert np.allclose(cfg_velocity(vc, vu, 3.0), [4.0, 0.0])

    @pytest.mark.parametrize("seed", range(10))
    def test_output_confined_to_span(self, seed):
        # The guided field never leaves span(v_cond, v_uncond): any
        # direction orthogonal to both stays exactly zero.
        rng = np.random.default_rng(seed)
        d = 8
        vc, vu = rng.standard_normal((2, d))
        basis, _ = np.linalg.qr(np.stack([vc, vu], axis=1))
        for gamma in (-2.0, 0.5, 1.0, 5.0):
            out = cfg_velocity(vc, vu, gamma)
            residual = out - basis @ (basis.T @ out)
            assert np.linalg.norm(residual) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cfg_velocity(np.zeros(2), np.zeros(3), 1.0)
