"""Flat text configuration for experiments.

Format: INI-style sections with whitespace-separated numeric lists.
Component rows inside `means`/`vars` are separated by ';'.  Scalar
variances broadcast across dimensions.  Example:

    [family]
    dim = 2

    [majority]
    means = -4 0 ; 0 4
    vars = 0.5 ; 0.3
    weights = 0.95 0.05

    [token 1]
    role = object
    means = 0 4
    vars = 0.3
    weights = 1

    [teacher]
    beta = 0.95

    [sampler]
    mode = ode
    steps = 28

    [run]
    seed = 2024
    particles = 8
    condition = 1
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import InjectionConfig
from .mixtures import GaussianMixture, TimeGrid
from .models import Condition, ConditionalFamily, Token, VelocityModel
from .sampling import NoiseSchedule, SamplerConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unparseable or contradictory experiment configs."""


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _rows(text: str) -> list[list[float]]:
    return [_floats(part) for part in text.split(";") if part.strip()]


def _mixture_from(section, dim: int, where: str) -> GaussianMixture:
    try:
        means = _rows(section["means"])
        variances = _rows(section["vars"])
        weights = _floats(section["weights"])
    except KeyError as exc:
        raise ConfigError(f"[{where}] missing key {exc}") from None
    mean_arr = np.array(means, dtype=float)
    if mean_arr.shape[1] != dim:
        raise ConfigError(f"[{where}] means have dim {mean_arr.shape[1]}, expected {dim}")
    var_rows = []
    for row in variances:
        if len(row) == 1:
            var_rows.append([row[0]] * dim)
        elif len(row) == dim:
            var_rows.append(row)
        else:
            raise ConfigError(f"[{where}] variance row length {len(row)} != {dim}")
    w = np.array(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ConfigError(f"[{where}] weights must have positive total")
    try:
        return GaussianMixture(mean_arr, np.array(var_rows), w / total)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


@dataclass(frozen=True)
class BenchSettings:
    condition_ids: tuple[tuple[int, ...], ...] = ((1,),)
    n_cells: int = 200
    base_seed: int = 2024
    seeds: tuple[int, ...] = ()  # optional explicit seed-ablation list


@dataclass(frozen=True)
class MarginalSettings:
    checkpoints: tuple[float, ...] = (0.8, 0.5, 0.2)
    trials: int = 5
    particles: int = 20000
    subsample: int = 2000
    permutations: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs, plus the canonical dict it hashes to."""

    family: ConditionalFamily
    teacher: VelocityModel
    student: VelocityModel
    sampler: SamplerConfig
    condition: Condition
    seed: int
    particles: int
    bench: BenchSettings
    marginal: MarginalSettings
    raw: dict = field(default_factory=dict, compare=False)
    source_text: str = field(default="", compare=False)

    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(config_dict: dict) -> str:
    """Stable short hash; insensitive to key ordering."""
    canon = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


_DEFAULTS = {
    "family": {"dim": "2"},
    "teacher": {"beta": "0.95", "omega": "0.0"},
    "student": {"beta": "0.0", "omega": "0.0"},
    "sampler": {
        "mode": "ode",
        "steps": "28",
        "clamp_lo": "1e-3",
        "clamp_hi": "1e-3",
        "noise_a": "0.7",
        "score_source": "velocity_approx",
    },
    "injection": {
        "alpha": "1.0",
        "proj_eps": "1e-8",
        "inject_steps": "0",
        "mask_tokens": "",
    },
    "run": {"seed": "2024", "particles": "8", "condition": "1"},
    "bench": {
        "conditions": "1",
        "n_cells": "200",
        "base_seed": "2024",
        "seeds": "",
    },
    "marginal": {
        "checkpoints": "0.8 0.5 0.2",
        "trials": "5",
        "particles": "20000",
        "subsample": "2000",
        "permutations": "200",
    },
}


def _parser_to_dict(cp: configparser.ConfigParser) -> dict:
    return {section: dict(cp.items(section)) for section in cp.sections()}


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse config text into a validated ExperimentConfig.

    overrides maps "section.key" to replacement string values (the CLI
    uses this); they land before validation and affect the config hash.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None

    for section, defaults in _DEFAULTS.items():
        if not cp.has_section(section):
            cp.add_section(section)
        for key, value in defaults.items():
            if not cp.has_option(section, key):
                cp.set(section, key, value)
    if overrides:
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if not section or not key:
                raise ConfigError(f"override {dotted!r} must look like section.key")
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, key, str(value))

    raw = _parser_to_dict(cp)
    raw["schema_version"] = SCHEMA_VERSION

    try:
        dim = cp.getint("family", "dim")
    except ValueError:
        raise ConfigError("[family] dim must be an integer") from None
    if dim < 1:
        raise ConfigError("[family] dim must be >= 1")

    if not cp.has_section("majority"):
        raise ConfigError("missing [majority] section")
    majority = _mixture_from(cp["majority"], dim, "majority")

    recipes: dict[int, GaussianMixture] = {}
    roles: dict[int, str] = {}
    for section in cp.sections():
        if not section.startswith("token "):
            continue
        try:
            tid = int(section.split(None, 1)[1])
        except (IndexError, ValueError):
            raise ConfigError(f"bad token section name [{section}]") from None
        recipes[tid] = _mixture_from(cp[section], dim, section)
        roles[tid] = cp[section].get("role", "object")
    family = ConditionalFamily(token_recipes=recipes, majority_prior=majority)

    def model(section: str, label: str) -> VelocityModel:
        try:
            return VelocityModel(
                family=family,
                beta=cp.getfloat(section, "beta"),
                omega=cp.getfloat(section, "omega"),
                label=label,
            )
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    teacher = model("teacher", "teacher")
    student = model("student", "student")

    s = cp["sampler"]
    mode = s["mode"]
    if mode == "injectflow":  # legacy alias
        mode = "inject"
    try:
        grid = TimeGrid.uniform(
            int(s["steps"]), float(s["clamp_lo"]), float(s["clamp_hi"])
        )
        schedule = NoiseSchedule(
            float(s["noise_a"]), float(s["clamp_lo"]), float(s["clamp_hi"])
        )
        inj = cp["injection"]
        injection = InjectionConfig(
            alpha=float(inj["alpha"]),
            proj_eps=float(inj["proj_eps"]),
            inject_steps=frozenset(_ints(inj["inject_steps"])),
            masked_token_ids=tuple(_ints(inj["mask_tokens"])),
        )
        sampler = SamplerConfig(
            mode=mode,
            grid=grid,
            schedule=schedule,
            injection=injection,
            score_source=s["score_source"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    r = cp["run"]
    condition_ids = _ints(r["condition"])
    for tid in condition_ids:
        if tid not in recipes:
            raise ConfigError(f"[run] condition token {tid} has no [token {tid}] section")
    condition = Condition.of(*condition_ids, roles=roles)

    b = cp["bench"]
    bench_conditions = tuple(
        tuple(_ints(part)) for part in b["conditions"].split(";") if part.strip()
    )
    for ids in bench_conditions:
        for tid in ids:
            if tid not in recipes:
                raise ConfigError(f"[bench] condition token {tid} has no recipe")
    bench = BenchSettings(
        condition_ids=bench_conditions or ((1,),),
        n_cells=int(b["n_cells"]),
        base_seed=int(b["base_seed"]),
        seeds=tuple(_ints(b["seeds"])),
    )

    m = cp["marginal"]
    marginal = MarginalSettings(
        checkpoints=tuple(_floats(m["checkpoints"])),
        trials=int(m["trials"]),
        particles=int(m["particles"]),
        subsample=int(m["subsample"]),
        permutations=int(m["permutations"]),
    )

    return ExperimentConfig(
        family=family,
        teacher=teacher,
        student=student,
        sampler=sampler,
        condition=condition,
        seed=int(r["seed"]),
        particles=int(r["particles"]),
        bench=bench,
        marginal=marginal,
        raw=raw,
        source_text=text,
    )


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), overrides=overrides)


def diff_config_dicts(old: dict, new: dict, prefix: str = "") -> list[str]:
    """Dotted keys whose values differ between two raw config dicts."""
    keys = sorted(set(old) | set(new))
    changed = []
    for key in keys:
        dotted = f"{prefix}{key}"
        if key not in old or key not in new:
            changed.append(dotted)
        elif isinstance(old[key], dict) and isinstance(new[key], dict):
            changed.extend(diff_config_dicts(old[key], new[key], prefix=f"{dotted}."))
        elif old[key] != new[key]:
            changed.append(dotted)
    return changed
