"""Orthogonal residual extraction and velocity injection.

Works on single vectors (d,) or batches (..., d); all inner products and
norms are taken over the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Condition, VelocityModel


class DegenerateTeacherError(ValueError):
    """Raised for eps=0 projections against a (near-)zero teacher field."""


@dataclass(frozen=True)
class InjectionConfig:
    """Knobs for the injected deterministic step(s).

    alpha scales the injected residual; proj_eps regularizes the
    projection denominator; inject_steps are grid step indices (0-based)
    that receive the injected velocity; masked_token_ids are hidden from
    the student before its probe evaluation.
    """

    alpha: float = 1.0
    proj_eps: float = 1e-8
    inject_steps: frozenset[int] = frozenset({0})
    masked_token_ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inject_steps", frozenset(self.inject_steps))
        object.__setattr__(self, "masked_token_ids", tuple(self.masked_token_ids))
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.proj_eps < 0:
            raise ValueError("proj_eps must be >= 0")
        if any(s < 0 for s in self.inject_steps):
            raise ValueError("inject_steps must be nonnegative indices")


def orthogonal_project(v_s: np.ndarray, v_t: np.ndarray, eps: float) -> np.ndarray:
    """Component of v_s orthogonal to v_t:

        v_s - <v_s, v_t> / (||v_t||^2 + eps) * v_t

    With eps=0 the result is exactly orthogonal to v_t; a small eps
    guards the near-zero-teacher case at the cost of an O(eps) residual
    inner product.
    """
    v_s = np.asarray(v_s, dtype=float)
    v_t = np.asarray(v_t, dtype=float)
    if v_s.shape != v_t.shape:
        raise ValueError(f"shape mismatch {v_s.shape} vs {v_t.shape}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    sq = np.sum(v_t * v_t, axis=-1, keepdims=True)
    if eps == 0.0 and np.any(np.sqrt(sq) <= 1e-12):
        raise DegenerateTeacherError("teacher field is numerically zero with eps=0")
    coef = np.sum(v_s * v_t, axis=-1, keepdims=True) / (sq + eps)
    return v_s - coef * v_t


def inject(v_t: np.ndarray, v_perp: np.ndarray, alpha: float) -> np.ndarray:
    """v_t + alpha * v_perp; returns v_t unchanged when alpha == 0."""
    v_t = np.asarray(v_t, dtype=float)
    v_perp = np.asarray(v_perp, dtype=float)
    if v_t.shape != v_perp.shape:
        raise ValueError(f"shape mismatch {v_t.shape} vs {v_perp.shape}")
    if alpha == 0.0:
        return v_t
    return v_t + alpha * v_perp


def extract_residual(
    teacher: VelocityModel,
    student: VelocityModel,
    x: np.ndarray,
    t: float,
    condition: Condition,
    config: InjectionConfig,
    rng: np.random.Generator | None = None,
):
    """Teacher velocity and the student's orthogonal residual against it.

    The teacher sees the full condition; the student sees the condition
    with config.masked_token_ids additionally hidden.  Returns
    (v_teacher, v_perp).
    """
    v_t = teacher.evaluate(x, t, condition, rng=rng)
    masked = condition.with_masked(config.masked_token_ids)
    v_s = student.evaluate(x, t, masked, rng=rng)
    v_perp = orthogonal_project(v_s, v_t, config.proj_eps)
    return v_t, v_perp
