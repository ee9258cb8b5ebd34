import numpy as np
import pytest

from orthoflow import (
    GaussianMixture,
    TimeGrid,
    marginal_density,
    marginal_score,
    marginal_velocity,
    path_sample,
    responsibilities,
)
from orthoflow.mixtures import (
    DegenerateDensityError,
    TimeDomainError,
    marginal_log_density,
)

from conftest import random_mixture


def single(mu, var, dim=1):
    return GaussianMixture([[mu] * dim], [[var] * dim], [1.0])


def normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)


class TestPathSample:
    def test_t0_returns_data(self, rng):
        m = random_mixture(rng, dim=3)
        x_t, x1, eps = path_sample(m, 0.0, rng)
        assert np.array_equal(x_t, x1)

    def test_t1_returns_noise(self, rng):
        m = random_mixture(rng, dim=3)
        x_t, x1, eps = path_sample(m, 1.0, rng)
        assert np.array_equal(x_t, eps)

    def test_midpoint_near_delta(self, rng):
        m = single(2.0, 1e-12)
        x_t, x1, eps = path_sample(m, 0.5, rng, size=100)
        assert np.allclose(x_t, 0.5 * 2.0 + 0.5 * eps, atol=1e-5)

    def test_rejects_bad_t(self, rng):
        with pytest.raises(TimeDomainError):
            path_sample(random_mixture(rng), 1.5, rng)


class TestMarginalDensity:
    def test_t1_is_standard_normal(self, rng):
        m = random_mixture(rng, dim=2, n_components=3)
        x = rng.standard_normal(2)
        expected = np.prod(normal_pdf(x, 0.0, 1.0))
        assert marginal_density(m, x, 1.0) == pytest.approx(expected, rel=1e-12)

    def test_single_component_formula(self):
        # mu=2, S=1, t=0.5 -> N(x; 1.0, 0.5)
        m = single(2.0, 1.0)
        for x in (-1.0, 0.3, 2.2):
            assert marginal_density(m, np.array([x]), 0.5) == pytest.approx(
                normal_pdf(x, 1.0, 0.5), rel=1e-12
            )

    def test_matches_quadrature_oracle(self, rng):
        # p_t(x) = int q(x1) N(x; (1-t) x1, t^2) dx1 on a dense 1-d grid
        m = random_mixture(rng, dim=1, n_components=2)
        t = 0.4
        grid = np.linspace(-15, 15, 20001)[:, None]
        dq = grid[1, 0] - grid[0, 0]
        q = marginal_density(m, grid, 0.0) if False else np.exp(
            marginal_log_density(m, grid, 0.0)
        )
        for x in (-0.7, 0.2, 1.5):
            kernel = normal_pdf(x, (1 - t) * grid[:, 0], t**2)
            oracle = np.sum(q * kernel) * dq
            assert marginal_density(m, np.array([x]), t) == pytest.approx(
                oracle, rel=1e-6
            )

    def test_rejects_degenerate_t0(self):
        m = single(1.0, 1e-13)
        with pytest.raises(DegenerateDensityError):
            marginal_density(m, np.array([1.0]), 0.0)

    def test_rejects_t_outside_domain(self, rng):
        m = random_mixture(rng)
        with pytest.raises(TimeDomainError):
            marginal_density(m, np.array([0.0]), 1.2)


class TestMarginalVelocity:
    def test_near_delta_points_at_mode(self, rng):
        m = single(1.5, 1e-10, dim=2)
        x = np.array([0.2, -0.4])
        for t in (0.3, 0.7):
            expected = (np.array([1.5, 1.5]) - x) / t
            assert np.allclose(marginal_velocity(m, x, t), expected, atol=1e-6)

    def test_symmetric_mixture_zero_at_origin(self):
        m = GaussianMixture([[-2.0], [2.0]], [[0.5], [0.5]], [0.5, 0.5])
        assert marginal_velocity(m, np.array([0.0]), 0.5) == pytest.approx(0.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_monte_carlo_conditional_expectation(self, seed):
        # Importance oracle: draw x1 ~ mixture, solve eps from x_t = x,
        # weight by the standard-normal density of eps.
        rng = np.random.default_rng(seed)
        m = random_mixture(rng, dim=1, n_components=2)
        x = rng.uniform(-2, 2, size=1)
        t = rng.uniform(0.2, 0.8)
        n = 10**6
        x1 = m.sample(rng, size=n)
        eps = (x - (1 - t) * x1) / t
        logw = -0.5 * np.sum(eps**2, axis=1)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        vals = x1 - eps
        est = (w[:, None] * vals).sum(axis=0)
        ess = 1.0 / np.sum(w**2)
        se = np.sqrt((w[:, None] * (vals - est) ** 2).sum(axis=0) / ess)
        v = marginal_velocity(m, x, t)
        assert np.all(np.abs(v - est) < 3 * se + 1e-9)

    def test_boundary_t_near_one(self, rng):
        m = random_mixture(rng, dim=2, n_components=3)
        x = rng.standard_normal(2)
        v = marginal_velocity(m, x, 1.0 - 1e-6)
        assert np.allclose(v, m.mean() - x, atol=1e-4)

    def test_minority_contribution_is_low_pass(self):
        # Halving the minority weight roughly halves its velocity share
        # near t=1.
        x = np.array([0.5, -0.2])
        t = 0.98

        def minority_share(m_w):
            m = GaussianMixture(
                [[0.0, 0.0], [4.0, 4.0]],
                [[0.5, 0.5], [0.5, 0.5]],
                [1 - m_w, m_w],
            )
            gamma = responsibilities(m, x, t)
            mu_t = (1 - t) * m.means
            a = (1 - t) ** 2 * m.variances + t**2
            v_min = m.means[1] + ((1 - t) * m.variances[1] - t) / a[1] * (
                x - mu_t[1]
            )
            return np.linalg.norm(gamma[1] * v_min)

        ratio = minority_share(0.01) / minority_share(0.005)
        assert abs(ratio - 2.0) < 0.2

    def test_rejects_closed_endpoints(self, rng):
        m = random_mixture(rng)
        for t in (0.0, 1.0):
            with pytest.raises(TimeDomainError):
                marginal_velocity(m, np.array([0.0]), t)


class TestMarginalScore:
    def test_t1_is_standard_normal_score(self, rng):
        m = random_mixture(rng, dim=3, n_components=2)
        x = rng.standard_normal(3)
        assert np.allclose(marginal_score(m, x, 1.0), -x, atol=1e-12)

    def test_near_delta_formula(self):
        m = single(2.0, 1e-10)
        x = np.array([0.7])
        t = 0.4
        expected = ((1 - t) * 2.0 - x) / t**2
        assert np.allclose(marginal_score(m, x, t), expected, rtol=1e-6)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        m = random_mixture(rng, dim=dim, n_components=int(rng.integers(1, 4)))
        x = rng.uniform(-3, 3, size=dim)
        t = rng.uniform(0.05, 1.0)
        h = 1e-5
        fd = np.empty(dim)
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = h
            fd[j] = (
                marginal_log_density(m, x + e, t) - marginal_log_density(m, x - e, t)
            ) / (2 * h)
        score = marginal_score(m, x, t)
        denom = np.maximum(np.abs(fd), 1e-3)
        assert np.all(np.abs(score - fd) / denom < 1e-5)


class TestResponsibilities:
    def test_single_component(self, rng):
        m = random_mixture(rng, n_components=1)
        assert responsibilities(m, np.array([0.3]), 0.5) == pytest.approx([1.0])

    def test_far_apart_concentrates(self):
        m = GaussianMixture([[0.0], [20.0]], [[1.0], [1.0]], [0.5, 0.5])
        t = 0.3
        gamma = responsibilities(m, np.array([(1 - t) * 0.0]), t)
        assert gamma[0] > 0.999

    def test_symmetric_pair_at_midpoint(self):
        m = GaussianMixture([[-3.0], [3.0]], [[0.7], [0.7]], [0.5, 0.5])
        gamma = responsibilities(m, np.array([0.0]), 0.4)
        assert np.allclose(gamma, [0.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("seed", range(30))
    def test_normalization(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 5))
        m = random_mixture(rng, dim=dim, n_components=int(rng.integers(1, 5)))
        x = rng.uniform(-5, 5, size=(7, dim))
        t = rng.uniform(0.01, 1.0)
        gamma = responsibilities(m, x, t)
        assert np.all(np.abs(gamma.sum(axis=-1) - 1.0) < 1e-10)

    def test_underflow_safe_at_small_t(self):
        m = GaussianMixture([[-300.0], [300.0]], [[0.1], [0.1]], [0.5, 0.5])
        gamma = responsibilities(m, np.array([-299.0]), 0.01)
        assert gamma[0] == pytest.approx(1.0)


class TestMixtureValidation:
    def test_weight_sum_enforced(self):
        with pytest.raises(ValueError):
            GaussianMixture([[0.0]], [[1.0]], [0.9])

    def test_positive_variances(self):
        with pytest.raises(ValueError):
            GaussianMixture([[0.0]], [[0.0]], [1.0])

    def test_grid_decreasing(self):
        with pytest.raises(ValueError):
            TimeGrid(knots=np.array([0.1, 0.5]))

    def test_uniform_grid_endpoints(self):
        g = TimeGrid.uniform(28)
        assert g.knots[0] == pytest.approx(1 - 1e-3)
        assert g.knots[-1] == pytest.approx(1e-3)
        assert g.n_steps == 28
