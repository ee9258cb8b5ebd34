"""ODE / SDE / injected sampling along the downward-time path.

Step primitives (ode_step, sde_step, sde_drift, score_from_velocity,
noise_sigma) are plain functions; `sample` runs a whole particle batch.

Randomness discipline: every particle owns independent streams derived
from (master seed, stage, particle index), so batched execution is
bitwise identical to sequential or parallel execution.  Stage tags keep
initial-noise draws separate from SDE noise, which lets ODE/SDE runs of
the same master seed share initial conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import InjectionConfig, inject, orthogonal_project
from .mixtures import (
    GaussianMixture,
    TimeDomainError,
    TimeGrid,
    marginal_score,
    marginal_velocity,
)
from .models import Condition, VelocityModel

MODES = ("ode", "sde", "inject")
SCORE_SOURCES = ("analytic", "velocity_approx", "none")

# Stream stage tags; never reorder (seed derivation contract).
STAGE_INIT = 0
STAGE_SDE = 1
STAGE_TEACHER = 2
STAGE_STUDENT = 3


class SamplerConfigError(ValueError):
    """Raised for contradictory sampler configuration."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Decaying schedule sigma_t = a * sqrt(t / (1 - t)).

    Evaluation clamps t into [clamp_lo, 1 - clamp_hi] (the formula
    diverges at t=1); callers can check `clamps(t)` to flag it.
    """

    a: float = 0.7
    clamp_lo: float = 1e-3
    clamp_hi: float = 1e-3

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a >= 0):
            raise ValueError("noise level a must be finite and >= 0")
        if not (0 < self.clamp_lo < 1 and 0 < self.clamp_hi < 1):
            raise ValueError("clamp margins must lie in (0, 1)")

    def clamps(self, t: float) -> bool:
        return t < self.clamp_lo or t > 1.0 - self.clamp_hi

    def sigma(self, t: float) -> float:
        t = min(max(t, self.clamp_lo), 1.0 - self.clamp_hi)
        return self.a * float(np.sqrt(t / (1.0 - t)))


def noise_sigma(schedule: NoiseSchedule, t: float) -> float:
    return schedule.sigma(t)


def ode_step(x: np.ndarray, t: float, t_next: float, v: np.ndarray) -> np.ndarray:
    """Euler step x + (t - t_next) * v under the downward-time convention."""
    if not t > t_next:
        raise ValueError(f"time must decrease: t={t}, t_next={t_next}")
    return x + (t - t_next) * v


def score_from_velocity(x: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """Training-free score estimate ((1-t) * v - x) / t.

    Derivation: the Gaussian path score is ((1-t) x1 - x) / t^2 and the
    straight-path velocity gives x1 ~= x + t v; substituting yields the
    formula above.  Exact for single-Gaussian targets with the exact
    velocity; approximate for mixtures.
    """
    if not 0.0 < t < 1.0:
        raise TimeDomainError(f"t={t} outside (0, 1)")
    return ((1.0 - t) * v - np.asarray(x, dtype=float)) / t


def sde_drift(
    x: np.ndarray, t: float, v: np.ndarray, sigma_t: float, score: np.ndarray
) -> np.ndarray:
    """Marginal-preserving drift v + (sigma_t^2 / 2) * score.

    Sign note: with the data-pointing velocity v = E[x1 - eps | x_t] and
    steps of positive size dt = t - t_next, the Fokker-Planck matching
    gives a plus sign on the score term; the marginal-equivalence test
    confirms this and rejects the flipped sign.
    """
    if sigma_t < 0:
        raise ValueError("sigma_t must be >= 0")
    if sigma_t == 0.0:
        return np.asarray(v, dtype=float)
    return v + 0.5 * sigma_t**2 * score


def _sde_update(
    x: np.ndarray, dt: float, drift: np.ndarray, sigma_t: float, xi: np.ndarray
) -> np.ndarray:
    return x + dt * drift + sigma_t * np.sqrt(dt) * xi


def sde_step(
    x: np.ndarray,
    t: float,
    t_next: float,
    drift: np.ndarray,
    sigma_t: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Euler-Maruyama step; reduces exactly to ode_step when sigma_t=0."""
    if not t > t_next:
        raise ValueError(f"time must decrease: t={t}, t_next={t_next}")
    if sigma_t == 0.0:
        return ode_step(x, t, t_next, drift)
    xi = rng.standard_normal(np.shape(x))
    return _sde_update(x, t - t_next, drift, sigma_t, xi)


@dataclass(frozen=True)
class SamplerConfig:
    mode: str
    grid: TimeGrid
    schedule: NoiseSchedule | None = None
    injection: InjectionConfig | None = None
    score_source: str = "velocity_approx"

    def __post_init__(self):
        if self.mode not in MODES:
            raise SamplerConfigError(f"unknown mode {self.mode!r}")
        if self.score_source not in SCORE_SOURCES:
            raise SamplerConfigError(f"unknown score source {self.score_source!r}")
        if self.mode in ("sde", "inject") and self.schedule is None:
            raise SamplerConfigError(f"mode {self.mode!r} requires a noise schedule")
        if self.mode == "inject":
            if self.injection is None:
                raise SamplerConfigError("inject mode requires an injection config")
            if self.injection.inject_steps and max(
                self.injection.inject_steps
            ) >= self.grid.n_steps:
                raise SamplerConfigError("inject_steps outside the time grid")


@dataclass(frozen=True)
class TrajectoryBatch:
    """All particle states over the grid: states[n, k] is particle n at knot k."""

    states: np.ndarray  # (N, K+1, d)
    grid: TimeGrid
    master_seed: int
    mode: str
    clamps_applied: bool = False

    def __post_init__(self):
        if self.states.ndim != 3:
            raise ValueError("states must have shape (N, K+1, d)")
        if self.states.shape[1] != self.grid.knots.size:
            raise ValueError("states second axis must match the grid length")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite trajectory states")

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def endpoints(self) -> np.ndarray:
        return self.states[:, -1, :]


def particle_stream(master_seed: int, stage: int, particle: int) -> np.random.Generator:
    """Independent per-(stage, particle) stream; index-based, order-free."""
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(stage, particle))
    )


def initial_noise(master_seed: int, n_particles: int, dim: int) -> np.ndarray:
    """Per-particle initial eps draws, shape (n_particles, dim)."""
    out = np.empty((n_particles, dim))
    for i in range(n_particles):
        out[i] = particle_stream(master_seed, STAGE_INIT, i).standard_normal(dim)
    return out


def _stage_noise(
    master_seed: int, stage: int, n_particles: int, shape: tuple[int, ...]
) -> np.ndarray:
    out = np.empty((n_particles, *shape))
    for i in range(n_particles):
        out[i] = particle_stream(master_seed, stage, i).standard_normal(shape)
    return out


def sample(
    config: SamplerConfig,
    teacher: VelocityModel,
    student: VelocityModel | None,
    condition: Condition,
    n_particles: int,
    master_seed: int,
    initial_states: np.ndarray | None = None,
) -> TrajectoryBatch:
    """Simulate the particle batch under the configured mode.

    ode: Euler with the teacher field; seeds only feed the initial eps.
    sde: drift-corrected Euler-Maruyama throughout.
    inject: deterministic injected step(s) at injection.inject_steps,
        plain ODE before them, SDE fission after the last one.
    """
    if config.mode == "inject" and student is None:
        raise SamplerConfigError("inject mode requires a student model")
    knots = config.grid.knots
    n_steps = config.grid.n_steps
    dim = teacher.family.dim

    if initial_states is None:
        x = initial_noise(master_seed, n_particles, dim)
    else:
        x = np.array(initial_states, dtype=float)
        if x.shape != (n_particles, dim):
            raise ValueError(f"initial_states must have shape ({n_particles}, {dim})")

    teacher_mix = teacher.effective_mixture(condition)
    sde_possible = config.mode in ("sde", "inject") and config.schedule.a > 0
    sde_noise = (
        _stage_noise(master_seed, STAGE_SDE, n_particles, (n_steps, dim))
        if sde_possible
        else None
    )
    teacher_noise = (
        _stage_noise(master_seed, STAGE_TEACHER, n_particles, (n_steps, dim))
        if teacher.omega > 0
        else None
    )

    inj = config.injection
    if config.mode == "inject" and inj is not None and inj.inject_steps:
        last_inject = max(inj.inject_steps)
        student_steps = sorted(inj.inject_steps)
        student_noise = (
            _stage_noise(
                master_seed, STAGE_STUDENT, n_particles, (len(student_steps), dim)
            )
            if student is not None and student.omega > 0
            else None
        )
        masked_condition = condition.with_masked(inj.masked_token_ids)
        student_mix = (
            student.effective_mixture(masked_condition) if student is not None else None
        )
    else:
        last_inject = -1
        student_steps = []
        student_noise = None
        student_mix = None

    clamped = any(
        config.schedule.clamps(float(t)) for t in knots
    ) if config.schedule is not None else False

    states = np.empty((n_particles, n_steps + 1, dim))
    states[:, 0] = x
    for i in range(n_steps):
        t, t_next = float(knots[i]), float(knots[i + 1])
        v = marginal_velocity(teacher_mix, x, t)
        if teacher_noise is not None:
            v = v + teacher.omega * teacher_noise[:, i]

        if config.mode == "ode":
            x = ode_step(x, t, t_next, v)
        elif config.mode == "sde":
            x = _diffused_step(config, teacher_mix, x, t, t_next, v, sde_noise, i)
        else:  # inject
            if i in inj.inject_steps:
                v_s = marginal_velocity(student_mix, x, t)
                if student_noise is not None:
                    v_s = v_s + student.omega * student_noise[:, student_steps.index(i)]
                v_perp = orthogonal_project(v_s, v, inj.proj_eps)
                x = ode_step(x, t, t_next, inject(v, v_perp, inj.alpha))
            elif i <= last_inject:
                x = ode_step(x, t, t_next, v)
            else:
                x = _diffused_step(config, teacher_mix, x, t, t_next, v, sde_noise, i)
        states[:, i + 1] = x

    return TrajectoryBatch(
        states=states,
        grid=config.grid,
        master_seed=master_seed,
        mode=config.mode,
        clamps_applied=clamped,
    )


def _diffused_step(
    config: SamplerConfig,
    teacher_mix: GaussianMixture,
    x: np.ndarray,
    t: float,
    t_next: float,
    v: np.ndarray,
    sde_noise: np.ndarray | None,
    step: int,
) -> np.ndarray:
    sigma = config.schedule.sigma(t)
    if sigma == 0.0 or sde_noise is None:
        return ode_step(x, t, t_next, v)
    if config.score_source == "analytic":
        score = marginal_score(teacher_mix, x, t)
    elif config.score_source == "velocity_approx":
        score = score_from_velocity(x, t, v)
    else:  # "none": deliberately corrupted drift for control runs
        score = None
    drift = v if score is None else sde_drift(x, t, v, sigma, score)
    return _sde_update(x, t - t_next, drift, sigma, sde_noise[:, step])
