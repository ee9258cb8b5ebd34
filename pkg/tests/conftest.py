import numpy as np
import pytest

from orthoflow import Condition, ConditionalFamily, GaussianMixture, VelocityModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mixture(rng, dim=1, n_components=2, spread=3.0):
    means = rng.uniform(-spread, spread, size=(n_components, dim))
    variances = rng.uniform(0.1, 1.5, size=(n_components, dim))
    weights = rng.uniform(0.2, 1.0, size=n_components)
    return GaussianMixture(means, variances, weights / weights.sum())


def two_mode_family(dim=2, maj=(-2.0, 0.0), minor=(0.0, 3.0), var=0.3, minority_w=0.05):
    """Majority prior with a small minority mass; token 1 targets the minority."""
    maj_mean = np.zeros(dim)
    maj_mean[: len(maj)] = maj
    min_mean = np.zeros(dim)
    min_mean[: len(minor)] = minor
    prior = GaussianMixture(
        [maj_mean, min_mean],
        [[var] * dim, [var] * dim],
        [1.0 - minority_w, minority_w],
    )
    token = GaussianMixture([min_mean], [[var] * dim], [1.0])
    return ConditionalFamily({1: token}, prior)


@pytest.fixture
def family():
    return two_mode_family()


@pytest.fixture
def minority_condition():
    return Condition.of(1)


@pytest.fixture
def biased_teacher(family):
    return VelocityModel(family, beta=0.95, omega=0.0, label="teacher")


@pytest.fixture
def clean_student(family):
    return VelocityModel(family, beta=0.0, omega=0.0, label="student")
