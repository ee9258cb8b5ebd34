"""Measurement machinery: latent volume, ranks, mode hits, two-sample tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .mixtures import GaussianMixture, responsibilities
from .sampling import TrajectoryBatch

VOLUME_PARTICLES = 8  # 8 trajectories span a 7-dimensional parallelotope
_SV_UNDERFLOW = 1e-300


@dataclass(frozen=True)
class VolumeTrace:
    """Natural-log parallelotope volume at each grid knot (-inf = degenerate)."""

    log_volumes: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        if self.log_volumes.shape != self.times.shape:
            raise ValueError("log_volumes and times must align")
        if np.any(np.isnan(self.log_volumes)) or np.any(self.log_volumes == np.inf):
            raise ValueError("log volumes must be finite or -inf")


def gram_log_volume(states: np.ndarray) -> float:
    """Half log-det of the Gram matrix of 8 concurrent states.

    The 8th state is the local origin; V stacks the 7 difference vectors
    and the value is (1/2) log det(V V^T), evaluated through singular
    values so deep collapse stays representable.  Returns -inf once any
    singular value underflows.
    """
    states = np.asarray(states, dtype=float)
    if states.shape[0] != VOLUME_PARTICLES:
        raise ValueError(f"exactly {VOLUME_PARTICLES} states required")
    d = states.shape[1]
    if d < VOLUME_PARTICLES - 1:
        raise ValueError(f"dimension {d} < {VOLUME_PARTICLES - 1}")
    v = states[:-1] - states[-1]
    sv = np.linalg.svd(v, compute_uv=False)
    if np.any(sv < _SV_UNDERFLOW):
        return float("-inf")
    return float(np.sum(np.log(sv)))


def volume_trace(batch: TrajectoryBatch) -> VolumeTrace:
    """gram_log_volume at every grid knot of an 8-particle batch."""
    if batch.n_particles != VOLUME_PARTICLES:
        raise ValueError(f"volume trace needs exactly {VOLUME_PARTICLES} particles")
    logs = np.array(
        [gram_log_volume(batch.states[:, k, :]) for k in range(batch.grid.knots.size)]
    )
    return VolumeTrace(log_volumes=logs, times=batch.grid.knots.copy())


def effective_rank(vectors: Sequence[np.ndarray], tol: float) -> int:
    """Number of singular values above tol * (largest singular value)."""
    mat = np.atleast_2d(np.asarray(list(vectors), dtype=float))
    if mat.size == 0:
        raise ValueError("empty vector list")
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def mode_assignment(
    mixture: GaussianMixture, x: np.ndarray, t: float = 1e-3
) -> int | np.ndarray:
    """Argmax posterior component near the data end of the path.

    Ties break toward the lowest index.  Accepts a single state (d,) or
    a batch (N, d).
    """
    x = np.asarray(x, dtype=float)
    gamma = responsibilities(mixture, x, t)
    idx = np.argmax(gamma, axis=-1)
    return int(idx) if x.ndim == 1 else idx


@dataclass(frozen=True)
class EndpointOutcome:
    """One paired-cell endpoint: where it landed and which mode it aimed for."""

    state: np.ndarray
    target: int
    mixture: GaussianMixture
    condition_key: str = ""
    seed: int = 0


@dataclass(frozen=True)
class BenchReport:
    """Correction accounting over paired baseline/treated runs.

    rate is None when the baseline produced no failures (never 1.0).
    """

    failures: int
    corrected: int
    rate: float | None
    per_condition: dict = field(default_factory=dict)
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.corrected > self.failures:
            raise ValueError("corrected cannot exceed failures")
        if self.rate is not None and not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")


def _rate(corrected: int, failures: int) -> float | None:
    return None if failures == 0 else corrected / failures


def correction_rate(
    baseline: Sequence[EndpointOutcome], treated: Sequence[EndpointOutcome]
) -> BenchReport:
    """Fraction of baseline mode misses that the treated run fixes.

    Runs must be paired: same length, and cell-by-cell identical
    (condition_key, seed, target).
    """
    if len(baseline) != len(treated):
        raise ValueError("baseline and treated runs have different lengths")
    failures = 0
    corrected = 0
    per_cond: dict[str, list[int]] = {}
    seeds = []
    for b, tr in zip(baseline, treated):
        if (b.condition_key, b.seed, b.target) != (tr.condition_key, tr.seed, tr.target):
            raise ValueError(
                f"unpaired cell: {(b.condition_key, b.seed, b.target)} vs "
                f"{(tr.condition_key, tr.seed, tr.target)}"
            )
        seeds.append(b.seed)
        counts = per_cond.setdefault(b.condition_key, [0, 0])
        if mode_assignment(b.mixture, b.state) != b.target:
            failures += 1
            counts[0] += 1
            if mode_assignment(tr.mixture, tr.state) == tr.target:
                corrected += 1
                counts[1] += 1
    per_condition = {
        key: {"failures": f, "corrected": c, "rate": _rate(c, f)}
        for key, (f, c) in per_cond.items()
    }
    return BenchReport(
        failures=failures,
        corrected=corrected,
        rate=_rate(corrected, failures),
        per_condition=per_condition,
        seeds=tuple(dict.fromkeys(seeds)),
    )


def energy_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """2 E||a-b|| - E||a-a'|| - E||b-b'|| (V-statistic form)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return (
        2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    )


def energy_distance(
    a: np.ndarray,
    b: np.ndarray,
    n_permutations: int = 200,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Energy statistic plus a permutation p-value.

    The pooled pairwise-distance matrix is computed once; each
    permutation reduces to one matrix-vector product against the
    permuted group-membership indicator.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("both sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng

    m, n = a.shape[0], b.shape[0]
    pooled = np.vstack([a, b])
    dist = cdist(pooled, pooled)
    row_sums = dist.sum(axis=1)

    def stat_for(mask_a: np.ndarray) -> float:
        # s_xy = sum of distances between groups X and Y (with S_AA, S_BB
        # the full double sums including both orderings)
        r = dist @ mask_a  # r[i] = sum_{j in A} d(i, j)
        s_aa = float(mask_a @ r)
        s_ab = float(r.sum() - s_aa)
        s_bb = float(row_sums.sum() - 2.0 * r.sum() + s_aa)
        return 2.0 * s_ab / (m * n) - s_aa / (m * m) - s_bb / (n * n)

    base_mask = np.zeros(m + n)
    base_mask[:m] = 1.0
    observed = stat_for(base_mask)
    exceed = 0
    for _ in range(n_permutations):
        if stat_for(rng.permutation(base_mask)) >= observed:
            exceed += 1
    p_value = (1 + exceed) / (1 + n_permutations)
    return float(observed), float(p_value)
