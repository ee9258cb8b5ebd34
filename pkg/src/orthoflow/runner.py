"""Experiment orchestration: the volume, marginal-equivalence and bias
benchmark runs, plus record persistence and bitwise replay.

Every command writes into one output directory: a config echo
(config.cfg), metadata.json (tool version, config hash, CSV digests,
timestamps) and the command's CSV outputs.  CSV bytes are deterministic
for a fixed config, which is what `cmd_replay` verifies.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    ExperimentConfig,
    SCHEMA_VERSION,
    diff_config_dicts,
    load_config,
    parse_config,
)
from .diagnostics import (
    EndpointOutcome,
    correction_rate,
    energy_distance,
    mode_assignment,
    volume_trace,
)
from .mixtures import GaussianMixture
from .sampling import SamplerConfig, TrajectoryBatch, sample

_FMT = "{:.17g}"


def _fmt(value: float) -> str:
    return _FMT.format(float(value))


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (str, int)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n")


def _echo_config(raw: dict) -> str:
    lines = []
    for section, entries in raw.items():
        if not isinstance(entries, dict):
            continue
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_trajectory_csv(path: Path, run_id: str, batch: TrajectoryBatch) -> None:
    header = ["run_id", "particle", "step", "t"] + [
        f"x_{j}" for j in range(batch.dim)
    ]
    rows = []
    for n in range(batch.n_particles):
        for k, t in enumerate(batch.grid.knots):
            rows.append([run_id, n, k, float(t), *batch.states[n, k]])
    _write_csv(path, header, rows)


def _finalize_run(
    out: Path,
    command: str,
    cfg: ExperimentConfig,
    started: float,
    clamps_applied: bool,
    extra: dict | None = None,
) -> dict:
    csv_digests = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.glob("*.csv"))
    }
    meta = {
        "tool_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config_hash": cfg.config_hash(),
        "raw_config": cfg.raw,
        "clamps_applied": clamps_applied,
        "csv_sha256": csv_digests,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "duration_seconds": time.monotonic() - started,
    }
    if extra:
        meta.update(extra)
    (out / "config.cfg").write_text(_echo_config(cfg.raw))
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta


def _prepare_out(out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_volume_track(cfg: ExperimentConfig, out: str | Path) -> dict:
    """ODE run with 8 particles; emits the per-step log-volume trace."""
    if cfg.particles != 8:
        raise ConfigError(
            f"volume tracking needs exactly 8 particles, got {cfg.particles}; "
            "set [run] particles = 8"
        )
    out = _prepare_out(out)
    started = time.monotonic()
    sampler = dataclasses.replace(cfg.sampler, mode="ode")
    batch = sample(sampler, cfg.teacher, None, cfg.condition, 8, cfg.seed)
    trace = volume_trace(batch)
    run_id = f"volume-{cfg.seed}"
    write_trajectory_csv(out / "trajectory.csv", run_id, batch)
    _write_csv(
        out / "volume.csv",
        ["metric", "run_id", "step", "t", "value"],
        [
            ["log_volume", run_id, k, float(t), float(v)]
            for k, (t, v) in enumerate(zip(trace.times, trace.log_volumes))
        ],
    )
    meta = _finalize_run(
        out,
        "volume-track",
        cfg,
        started,
        batch.clamps_applied,
        extra={
            "initial_log_volume": float(trace.log_volumes[0]),
            "final_log_volume": float(trace.log_volumes[-1]),
        },
    )
    return meta


def _checkpoint_indices(grid_knots: np.ndarray, checkpoints) -> list[tuple[float, int]]:
    pairs = []
    for t in checkpoints:
        idx = int(np.argmin(np.abs(grid_knots - t)))
        pairs.append((float(grid_knots[idx]), idx))
    final = grid_knots.size - 1
    if all(idx != final for _, idx in pairs):
        pairs.append((float(grid_knots[final]), final))
    return pairs


def cmd_marginal_check(cfg: ExperimentConfig, out: str | Path) -> dict:
    """ODE-vs-SDE marginal equivalence report plus corrupted-drift control.

    Per trial, three independent ensembles are run (ode; sde with the
    analytic score; sde with the score term dropped) and compared at the
    configured checkpoint times with an energy-distance permutation
    test.  The permutation test runs on a seeded subsample of each
    ensemble to keep the distance matrix tractable.
    """
    out = _prepare_out(out)
    started = time.monotonic()
    m = cfg.marginal
    base = cfg.sampler
    sde_cfg = dataclasses.replace(base, mode="sde", score_source="analytic")
    corrupt_cfg = dataclasses.replace(base, mode="sde", score_source="none")
    ode_cfg = dataclasses.replace(base, mode="ode")
    pairs = _checkpoint_indices(base.grid.knots, m.checkpoints)

    rows = []
    clamps = False
    any_endpoints: dict[str, np.ndarray] = {}
    for trial in range(m.trials):
        seeds = {
            "ode": cfg.seed + 1000 * trial,
            "sde": cfg.seed + 1000 * trial + 1,
            "corrupted": cfg.seed + 1000 * trial + 2,
        }
        batches = {
            "ode": sample(ode_cfg, cfg.teacher, None, cfg.condition, m.particles, seeds["ode"]),
            "sde": sample(sde_cfg, cfg.teacher, None, cfg.condition, m.particles, seeds["sde"]),
            "corrupted": sample(
                corrupt_cfg, cfg.teacher, None, cfg.condition, m.particles, seeds["corrupted"]
            ),
        }
        clamps = clamps or any(b.clamps_applied for b in batches.values())
        if trial == 0:
            for name in ("ode", "sde"):
                any_endpoints[name] = batches[name].endpoints
        for variant in ("sde", "corrupted"):
            for t_ck, idx in pairs:
                rng = np.random.default_rng(
                    (cfg.seed, trial, idx, 0 if variant == "sde" else 1)
                )
                a = batches["ode"].states[:, idx, :]
                b = batches[variant].states[:, idx, :]
                if m.subsample and m.subsample < m.particles:
                    a = a[rng.choice(m.particles, m.subsample, replace=False)]
                    b = b[rng.choice(m.particles, m.subsample, replace=False)]
                stat, p = energy_distance(a, b, n_permutations=m.permutations, rng=rng)
                rows.append([trial, variant, t_ck, idx, stat, p, int(p > 0.01)])

    _write_csv(
        out / "marginal.csv",
        ["trial", "variant", "t", "step", "energy_stat", "p_value", "passed"],
        rows,
    )
    dim = cfg.family.dim
    for name, states in any_endpoints.items():
        _write_csv(
            out / f"{name}_endpoints.csv",
            [f"x_{j}" for j in range(dim)],
            [list(s) for s in states],
        )

    # Criterion bookkeeping: SDE should be indistinguishable at every
    # checkpoint in most trials; the corrupted control must be caught.
    per_ck_pass = {}
    control_fail_trials = 0
    for t_ck, idx in pairs:
        n_pass = sum(1 for r in rows if r[1] == "sde" and r[3] == idx and r[6] == 1)
        per_ck_pass[str(t_ck)] = n_pass
    for trial in range(m.trials):
        if any(
            r[0] == trial and r[1] == "corrupted" and r[5] < 0.01 for r in rows
        ):
            control_fail_trials += 1
    meta = _finalize_run(
        out,
        "marginal-check",
        cfg,
        started,
        clamps,
        extra={
            "trials": m.trials,
            "sde_pass_counts": per_ck_pass,
            "control_detected_trials": control_fail_trials,
        },
    )
    return meta


def _scoring_mixture(cfg: ExperimentConfig, condition_ids) -> tuple[GaussianMixture, int]:
    """Bias-free scoring view: conditional block vs majority prior, 50/50.

    The target is the conditional block's dominant component (index
    within the concatenated scoring mixture).
    """
    cond = cfg.family.conditional(condition_ids)
    prior = cfg.family.majority_prior
    means = np.concatenate([cond.means, prior.means])
    variances = np.concatenate([cond.variances, prior.variances])
    weights = np.concatenate([0.5 * cond.weights, 0.5 * prior.weights])
    target = int(np.argmax(cond.weights))
    return GaussianMixture(means, variances, weights), target


_BENCH_VARIANTS = ("baseline", "treated", "control")


def _bench_cell(args):
    config_text, base_seed, cond_idx, cell_idx = args
    cfg = parse_config(config_text)
    condition_ids = cfg.bench.condition_ids[cond_idx]
    roles = {t.id: t.role for t in cfg.condition.tokens}
    condition = type(cfg.condition).of(*condition_ids, roles=roles)
    master_seed = base_seed + 1_000_000 * cond_idx + cell_idx

    ode_cfg = dataclasses.replace(cfg.sampler, mode="ode")
    inject_cfg = dataclasses.replace(cfg.sampler, mode="inject")
    control_cfg = dataclasses.replace(
        inject_cfg, injection=dataclasses.replace(cfg.sampler.injection, alpha=0.0)
    )
    endpoints = {}
    for variant, scfg in (
        ("baseline", ode_cfg),
        ("treated", inject_cfg),
        ("control", control_cfg),
    ):
        batch = sample(scfg, cfg.teacher, cfg.student, condition, 1, master_seed)
        endpoints[variant] = batch.endpoints[0]
    return base_seed, cond_idx, cell_idx, master_seed, endpoints


def cmd_bias_bench(cfg: ExperimentConfig, out: str | Path, jobs: int = 1) -> dict:
    """Paired baseline/treated/control cells, scored by mode assignment.

    baseline: plain ODE.  treated: injected step(s) then SDE fission.
    control: same but with the injection scale forced to zero (SDE
    fission alone).  Cells are paired through shared master seeds.  When
    [bench] seeds lists several base seeds, the whole cell set runs once
    per seed and per-seed reports are emitted.
    """
    if cfg.sampler.injection is None:
        raise ConfigError("bias bench requires an [injection] section")
    out = _prepare_out(out)
    started = time.monotonic()
    base_seeds = cfg.bench.seeds or (cfg.bench.base_seed,)
    echo = _echo_config(cfg.raw)
    cells = [
        (echo, bs, ci, i)
        for bs in base_seeds
        for ci in range(len(cfg.bench.condition_ids))
        for i in range(cfg.bench.n_cells)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bench_cell, cells, chunksize=8))
    else:
        results = [_bench_cell(c) for c in cells]
    results.sort(key=lambda r: (r[0], r[1], r[2]))

    dim = cfg.family.dim
    endpoint_rows = []
    bench_rows = []
    overall = {"baseline_hits": 0, "cells": 0}
    agg = {"treated": [0, 0], "control": [0, 0]}  # [failures, corrected]
    for bs in base_seeds:
        outcomes = {v: [] for v in _BENCH_VARIANTS}
        for base_seed, cond_idx, cell_idx, master_seed, endpoints in results:
            if base_seed != bs:
                continue
            condition_ids = cfg.bench.condition_ids[cond_idx]
            key = "+".join(str(t) for t in condition_ids)
            scoring, target = _scoring_mixture(cfg, condition_ids)
            for variant in _BENCH_VARIANTS:
                state = endpoints[variant]
                assigned = mode_assignment(scoring, state)
                outcomes[variant].append(
                    EndpointOutcome(
                        state=state,
                        target=target,
                        mixture=scoring,
                        condition_key=key,
                        seed=master_seed,
                    )
                )
                endpoint_rows.append(
                    [bs, key, cell_idx, variant, master_seed, target, assigned, *state]
                )
        reports = {
            "treated": correction_rate(outcomes["baseline"], outcomes["treated"]),
            "control": correction_rate(outcomes["baseline"], outcomes["control"]),
        }
        overall["cells"] += len(outcomes["baseline"])
        overall["baseline_hits"] += sum(
            1
            for o in outcomes["baseline"]
            if mode_assignment(o.mixture, o.state) == o.target
        )
        for variant, report in reports.items():
            agg[variant][0] += report.failures
            agg[variant][1] += report.corrected
            for key, entry in sorted(report.per_condition.items()):
                bench_rows.append(
                    [
                        bs,
                        variant,
                        key,
                        entry["failures"],
                        entry["corrected"],
                        "" if entry["rate"] is None else _fmt(entry["rate"]),
                    ]
                )
            bench_rows.append(
                [
                    bs,
                    variant,
                    "overall",
                    report.failures,
                    report.corrected,
                    "" if report.rate is None else _fmt(report.rate),
                ]
            )

    _write_csv(
        out / "bench.csv",
        ["base_seed", "variant", "condition", "failures", "corrected", "rate"],
        bench_rows,
    )
    _write_csv(
        out / "endpoints.csv",
        ["base_seed", "condition", "cell", "variant", "seed", "target", "assigned"]
        + [f"x_{j}" for j in range(dim)],
        endpoint_rows,
    )
    baseline_hit_rate = (
        overall["baseline_hits"] / overall["cells"] if overall["cells"] else 0.0
    )
    meta = _finalize_run(
        out,
        "bias-bench",
        cfg,
        started,
        False,
        extra={
            "cells": overall["cells"],
            "baseline_hit_rate": baseline_hit_rate,
            "treated_rate": _rate_or_none(agg["treated"]),
            "control_rate": _rate_or_none(agg["control"]),
        },
    )
    return meta


def _rate_or_none(pair):
    failures, corrected = pair
    return None if failures == 0 else corrected / failures


_COMMANDS = {}


def cmd_replay(run_dir: str | Path, scratch: str | Path | None = None) -> dict:
    """Re-run a recorded experiment and verify byte-identical CSV output.

    Fails with a key diff when the echoed config no longer matches the
    recorded config hash, and with a file list when any regenerated CSV
    differs.
    """
    run_dir = Path(run_dir)
    meta_path = run_dir / "metadata.json"
    echo_path = run_dir / "config.cfg"
    if not meta_path.exists() or not echo_path.exists():
        raise ConfigError(f"{run_dir} is not a recorded run directory")
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"schema version {meta.get('schema_version')} != {SCHEMA_VERSION}"
        )
    cfg = load_config(echo_path)
    report: dict = {"run_dir": str(run_dir), "passed": True, "mismatches": []}
    if cfg.config_hash() != meta["config_hash"]:
        changed = diff_config_dicts(meta["raw_config"], cfg.raw)
        report["passed"] = False
        report["mismatches"].append(
            {"kind": "config", "changed_keys": changed}
        )
        return report

    command = meta["command"]
    runner = _COMMANDS.get(command)
    if runner is None:
        raise ConfigError(f"unknown recorded command {command!r}")
    scratch = Path(scratch) if scratch is not None else run_dir / "_replay"
    runner(cfg, scratch)
    for name, digest in meta["csv_sha256"].items():
        new_path = scratch / name
        new_digest = (
            hashlib.sha256(new_path.read_bytes()).hexdigest()
            if new_path.exists()
            else None
        )
        if new_digest != digest:
            report["passed"] = False
            report["mismatches"].append({"kind": "csv", "file": name})
    return report


_COMMANDS.update(
    {
        "volume-track": cmd_volume_track,
        "marginal-check": cmd_marginal_check,
        "bias-bench": cmd_bias_bench,
    }
)
