"""Teacher/student velocity models over a condition-indexed mixture family.

Conditions are small ordered token sets with per-token mask flags.  Each
token contributes mixture components; the family also carries a majority
prior.  A model's "bias" beta convexly blends the true conditional
mixture toward the majority prior, and "weakness" omega adds seeded
zero-mean output noise.  Masking every token makes a condition fully
unconditional (the majority prior).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mixtures import GaussianMixture, marginal_velocity

ROLES = ("object", "attribute", "relation")


class ConfigurationError(ValueError):
    """Raised when a condition resolves to no usable mixture."""


@dataclass(frozen=True)
class Token:
    id: int
    role: str = "object"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class Condition:
    """Ordered tokens with per-token mask flags (True = hidden)."""

    tokens: tuple[Token, ...]
    mask: tuple[bool, ...] = ()

    def __post_init__(self):
        tokens = tuple(self.tokens)
        mask = tuple(self.mask) if self.mask else (False,) * len(tokens)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "mask", mask)
        if len(mask) != len(tokens):
            raise ValueError("mask length must equal token count")
        ids = [t.id for t in tokens]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate token ids in condition")

    @classmethod
    def of(cls, *token_ids: int, roles: dict[int, str] | None = None) -> "Condition":
        roles = roles or {}
        return cls(tuple(Token(i, roles.get(i, "object")) for i in token_ids))

    def unmasked_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t, m in zip(self.tokens, self.mask) if not m)

    def with_masked(self, token_ids) -> "Condition":
        """Return a copy with the given token ids additionally masked."""
        hide = set(token_ids)
        mask = tuple(m or (t.id in hide) for t, m in zip(self.tokens, self.mask))
        return replace(self, mask=mask)


@dataclass(frozen=True)
class ConditionalFamily:
    """Maps token subsets to mixtures; carries the majority prior.

    token_recipes: token id -> mixture contributed by that token.  The
    conditional mixture of a token set concatenates the recipes of its
    tokens with weights renormalized; the empty set means unconditional
    and resolves to the majority prior.
    """

    token_recipes: dict[int, GaussianMixture]
    majority_prior: GaussianMixture

    def __post_init__(self):
        d = self.majority_prior.dim
        for tid, mix in self.token_recipes.items():
            if mix.dim != d:
                raise ValueError(f"token {tid} recipe dimension {mix.dim} != {d}")

    @property
    def dim(self) -> int:
        return self.majority_prior.dim

    def conditional(self, token_ids) -> GaussianMixture:
        token_ids = tuple(token_ids)
        if not token_ids:
            return self.majority_prior
        parts = []
        for tid in token_ids:
            if tid not in self.token_recipes:
                raise ConfigurationError(f"no recipe for token id {tid}")
            parts.append(self.token_recipes[tid])
        means = np.concatenate([p.means for p in parts])
        variances = np.concatenate([p.variances for p in parts])
        weights = np.concatenate([p.weights for p in parts])
        total = weights.sum()
        if total <= 0:
            raise ConfigurationError("condition resolves to an empty mixture")
        return GaussianMixture(means, variances, weights / total)


@dataclass(frozen=True)
class VelocityModel:
    """Evaluable vector field v(x, t, c) backed by a mixture family.

    beta in [0, 1] blends conditional weights toward the majority prior
    (the bias knob); omega >= 0 scales additive output noise (the
    weakness knob).  Teachers are typically (beta > 0, omega = 0) and
    students (beta = 0, omega >= 0).
    """

    family: ConditionalFamily
    beta: float = 0.0
    omega: float = 0.0
    label: str = "teacher"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not (np.isfinite(self.omega) and self.omega >= 0):
            raise ValueError("omega must be finite and >= 0")
        if self.label not in ("teacher", "student"):
            raise ValueError("label must be 'teacher' or 'student'")

    def effective_mixture(self, condition: Condition) -> GaussianMixture:
        """(1-beta) * conditional + beta * majority prior, renormalized."""
        cond = self.family.conditional(condition.unmasked_ids())
        prior = self.family.majority_prior
        if self.beta == 0.0:
            return cond
        if self.beta == 1.0 or cond is prior:
            return prior
        means = np.concatenate([cond.means, prior.means])
        variances = np.concatenate([cond.variances, prior.variances])
        weights = np.concatenate(
            [(1.0 - self.beta) * cond.weights, self.beta * prior.weights]
        )
        return GaussianMixture(means, variances, weights)

    def evaluate(
        self,
        x: np.ndarray,
        t: float,
        condition: Condition,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """Marginal velocity of the effective mixture, plus omega-noise.

        Deterministic when omega == 0; otherwise rng is required and the
        perturbation is omega * standard normal.
        """
        v = marginal_velocity(self.effective_mixture(condition), x, t)
        if self.omega > 0.0:
            if rng is None:
                raise ValueError("omega > 0 requires a seeded rng")
            v = v + self.omega * rng.standard_normal(np.shape(v))
        return v


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, gamma: float) -> np.ndarray:
    """Classifier-free guidance blend v_uncond + gamma * (v_cond - v_uncond).

    The output always stays in span(v_cond, v_uncond); it cannot add
    directions orthogonal to both inputs.
    """
    v_cond = np.asarray(v_cond, dtype=float)
    v_uncond = np.asarray(v_uncond, dtype=float)
    if v_cond.shape != v_uncond.shape:
        raise ValueError(f"shape mismatch {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + gamma * (v_cond - v_uncond)
