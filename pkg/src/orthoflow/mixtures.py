"""Closed-form flow-matching math over diagonal Gaussian mixtures.

Path convention (fixed for the whole package): for data x1 and noise
eps ~ N(0, I),

    x_t = (1 - t) * x1 + t * eps

so t=0 is data, t=1 is pure noise, and sampling integrates t downward.
The time-t marginal of a mixture sum_i w_i N(mu_i, S_i) is again a
mixture with component i having mean (1-t)*mu_i and diagonal covariance
A_i = (1-t)^2 * S_i + t^2.  Everything here (density, posterior
responsibilities, velocity, score) is exact for diagonal covariances and
computed in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

# Component variances below this are treated as degenerate at t=0.
VAR_FLOOR = 1e-12

_LOG_2PI = float(np.log(2.0 * np.pi))


class TimeDomainError(ValueError):
    """Raised when t lies outside the operation's valid time range."""


class DegenerateDensityError(ValueError):
    """Raised for t=0 evaluations of a mixture with near-zero variances."""


@dataclass(frozen=True)
class GaussianMixture:
    """Diagonal-covariance Gaussian mixture in R^d.

    means: (C, d) component means.
    variances: (C, d) per-dimension variances, all > 0.
    weights: (C,) nonnegative, summing to 1 within 1e-12.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)
        if means.shape != variances.shape:
            raise ValueError(
                f"means {means.shape} and variances {variances.shape} differ"
            )
        if weights.shape != (means.shape[0],):
            raise ValueError("one weight per component required")
        if means.shape[0] < 1:
            raise ValueError("at least one component required")
        if not np.all(np.isfinite(means)) or not np.all(np.isfinite(variances)):
            raise ValueError("mixture parameters must be finite")
        if np.any(variances <= 0):
            raise ValueError("variances must be strictly positive")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()}, expected 1")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw x1 ~ mixture.  Returns (d,) or (size, d)."""
        n = 1 if size is None else size
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        x = self.means[idx] + np.sqrt(self.variances[idx]) * rng.standard_normal(
            (n, self.dim)
        )
        return x[0] if size is None else x


@dataclass(frozen=True)
class PathConvention:
    """Documentation object for the adopted probability path.

    x_t = (1 - t) * x1 + t * eps; data lives at t=0, noise at t=1, and
    samplers step t downward.  The velocity fields in this package are
    E[x1 - eps | x_t], which point from noise toward data under this
    convention.
    """

    description: str = "x_t = (1-t)*x1 + t*eps; data at t=0, noise at t=1"


PATH = PathConvention()


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing knots in (0, 1), noise end first.

    knots[0] = 1 - clamp_hi, knots[-1] = clamp_lo.
    """

    knots: np.ndarray
    clamp_lo: float = 1e-3
    clamp_hi: float = 1e-3

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("grid needs at least two knots")
        if np.any(np.diff(knots) >= 0):
            raise ValueError("knots must be strictly decreasing")
        if knots[0] >= 1.0 or knots[-1] <= 0.0:
            raise ValueError("knots must lie in (0, 1)")

    @classmethod
    def uniform(cls, steps: int, clamp_lo: float = 1e-3, clamp_hi: float = 1e-3):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        knots = np.linspace(1.0 - clamp_hi, clamp_lo, steps + 1)
        return cls(knots=knots, clamp_lo=clamp_lo, clamp_hi=clamp_hi)

    @property
    def n_steps(self) -> int:
        return self.knots.size - 1


def _check_t(mixture: GaussianMixture, t: float, *, open_right: bool) -> None:
    if not np.isfinite(t):
        raise TimeDomainError(f"t={t} is not finite")
    hi_ok = t < 1.0 if open_right else t <= 1.0
    if t < 0.0 or not hi_ok:
        raise TimeDomainError(f"t={t} outside valid range")
    if t == 0.0:
        if float(mixture.variances.min()) < VAR_FLOOR:
            raise DegenerateDensityError(
                "t=0 evaluation of a mixture with degenerate component variance"
            )
    if open_right and t == 0.0:
        raise TimeDomainError("t=0 outside open interval (0, 1)")


def _log_weighted_comp_density(
    mixture: GaussianMixture, x: np.ndarray, t: float
) -> np.ndarray:
    """log(w_i) + log N(x; (1-t)mu_i, A_i) for each component.

    x has shape (..., d); result has shape (..., C).
    """
    x = np.asarray(x, dtype=float)
    mu_t = (1.0 - t) * mixture.means  # (C, d)
    a = (1.0 - t) ** 2 * mixture.variances + t**2  # (C, d)
    diff = x[..., None, :] - mu_t  # (..., C, d)
    log_n = -0.5 * np.sum(diff**2 / a + np.log(a) + _LOG_2PI, axis=-1)
    with np.errstate(divide="ignore"):
        return log_n + np.log(mixture.weights)


def marginal_log_density(mixture: GaussianMixture, x: np.ndarray, t: float) -> np.ndarray:
    """log p_t(x) for x of shape (..., d); returns shape (...)."""
    _check_t(mixture, t, open_right=False)
    return logsumexp(_log_weighted_comp_density(mixture, x, t), axis=-1)


def marginal_density(mixture: GaussianMixture, x: np.ndarray, t: float) -> np.ndarray:
    """p_t(x) = sum_i w_i N(x; (1-t)mu_i, (1-t)^2 S_i + t^2 I)."""
    return np.exp(marginal_log_density(mixture, x, t))


def responsibilities(mixture: GaussianMixture, x: np.ndarray, t: float) -> np.ndarray:
    """Posterior component probabilities given x_t = x; shape (..., C)."""
    _check_t(mixture, t, open_right=False)
    log_wd = _log_weighted_comp_density(mixture, x, t)
    return np.exp(log_wd - logsumexp(log_wd, axis=-1, keepdims=True))


def marginal_velocity(mixture: GaussianMixture, x: np.ndarray, t: float) -> np.ndarray:
    """E[x1 - eps | x_t = x] under the mixture path.

    Per component the posterior of (x1, eps) given x_t is jointly Gaussian,
    giving the affine conditional expectation

        v_i(x) = mu_i + ((1-t) S_i - t) / A_i * (x - (1-t) mu_i)

    with A_i = (1-t)^2 S_i + t^2 (all elementwise); the marginal field is
    the responsibility-weighted blend.  Validated against a Monte-Carlo
    conditional-expectation oracle in the tests.
    """
    _check_t(mixture, t, open_right=True)
    x = np.asarray(x, dtype=float)
    mu_t = (1.0 - t) * mixture.means
    a = (1.0 - t) ** 2 * mixture.variances + t**2
    diff = x[..., None, :] - mu_t  # (..., C, d)
    v_comp = mixture.means + ((1.0 - t) * mixture.variances - t) / a * diff
    gamma = responsibilities(mixture, x, t)  # (..., C)
    return np.sum(gamma[..., None] * v_comp, axis=-2)


def marginal_score(mixture: GaussianMixture, x: np.ndarray, t: float) -> np.ndarray:
    """grad_x log p_t(x), exact for the diagonal mixture marginal."""
    _check_t(mixture, t, open_right=False)
    x = np.asarray(x, dtype=float)
    mu_t = (1.0 - t) * mixture.means
    a = (1.0 - t) ** 2 * mixture.variances + t**2
    diff = x[..., None, :] - mu_t
    gamma = responsibilities(mixture, x, t)
    return np.sum(gamma[..., None] * (-diff / a), axis=-2)


def path_sample(
    mixture: GaussianMixture,
    t: float,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Draw (x_t, x1, eps) from the conditional path at time t.

    Shapes are (d,) each, or (size, d) when size is given.
    """
    if not 0.0 <= t <= 1.0:
        raise TimeDomainError(f"t={t} outside [0, 1]")
    x1 = mixture.sample(rng, size=size)
    eps = rng.standard_normal(x1.shape)
    x_t = (1.0 - t) * x1 + t * eps
    return x_t, x1, eps
