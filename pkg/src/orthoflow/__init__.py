"""Numerical laboratory for bias lock-in, orthogonal velocity injection
and marginal-preserving stochastic sampling over Gaussian-mixture flows."""

__version__ = "0.1.0"

from .mixtures import (
    GaussianMixture,
    PathConvention,
    TimeGrid,
    marginal_density,
    marginal_score,
    marginal_velocity,
    path_sample,
    responsibilities,
)
from .models import Condition, ConditionalFamily, Token, VelocityModel, cfg_velocity
from .geometry import InjectionConfig, extract_residual, inject, orthogonal_project
from .sampling import (
    NoiseSchedule,
    SamplerConfig,
    TrajectoryBatch,
    noise_sigma,
    ode_step,
    sample,
    score_from_velocity,
    sde_drift,
    sde_step,
)
from .diagnostics import (
    BenchReport,
    EndpointOutcome,
    VolumeTrace,
    correction_rate,
    effective_rank,
    energy_distance,
    energy_statistic,
    gram_log_volume,
    mode_assignment,
    volume_trace,
)

__all__ = [
    "GaussianMixture",
    "PathConvention",
    "TimeGrid",
    "marginal_density",
    "marginal_score",
    "marginal_velocity",
    "path_sample",
    "responsibilities",
    "Condition",
    "ConditionalFamily",
    "Token",
    "VelocityModel",
    "cfg_velocity",
    "InjectionConfig",
    "extract_residual",
    "inject",
    "orthogonal_project",
    "NoiseSchedule",
    "SamplerConfig",
    "TrajectoryBatch",
    "noise_sigma",
    "ode_step",
    "sample",
    "score_from_velocity",
    "sde_drift",
    "sde_step",
    "BenchReport",
    "EndpointOutcome",
    "VolumeTrace",
    "correction_rate",
    "effective_rank",
    "energy_distance",
    "energy_statistic",
    "gram_log_volume",
    "mode_assignment",
    "volume_trace",
]
