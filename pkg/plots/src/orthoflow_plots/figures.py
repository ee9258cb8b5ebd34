"""Figure rendering from run-directory CSVs.

Four kinds: `volume` (log-volume vs step line), `scatter` (endpoints
colored by assigned mode), `bars` (correction rates per condition) and
`marginal` (per-dimension histogram overlays of two endpoint sets).
Rendering only reads the inputs; with a fixed style version the same CSV
bytes produce the same PNG bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE_VERSION = 1
KINDS = ("volume", "scatter", "bars", "marginal")

# Fixed columns per kind; trajectory-style x_* columns are checked by prefix.
_REQUIRED = {
    "volume": ["metric", "run_id", "step", "t", "value"],
    "scatter": ["base_seed", "condition", "cell", "variant", "seed", "target", "assigned"],
    "bars": ["base_seed", "variant", "condition", "failures", "corrected", "rate"],
    "marginal": [],
}
_N_INPUTS = {"volume": 1, "scatter": 1, "bars": 1, "marginal": 2}


class SchemaError(ValueError):
    """Raised when a CSV does not match the expected column layout."""


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple[str, ...]
    kind: str
    out: str
    title: str = ""
    dpi: int = 100

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if len(self.inputs) != _N_INPUTS[self.kind]:
            raise ValueError(
                f"kind {self.kind!r} takes {_N_INPUTS[self.kind]} input file(s), "
                f"got {len(self.inputs)}"
            )
        for p in self.inputs:
            if not Path(p).exists():
                raise FileNotFoundError(p)


def _read_table(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    return rows[0], rows[1:]


def _check_columns(path: str, header: list[str], required: list[str], x_cols: bool):
    missing = [c for c in required if c not in header]
    extra = [c for c in header if c not in required and not c.startswith("x_")]
    have_x = [c for c in header if c.startswith("x_")]
    problems = []
    if missing:
        problems.append(f"missing columns: {missing}")
    if x_cols and not have_x:
        problems.append("missing coordinate columns x_0, x_1, ...")
    if not x_cols and extra:
        problems.append(f"unexpected columns: {extra}")
    if problems:
        raise SchemaError(
            f"{path}: schema mismatch for this figure kind; "
            + "; ".join(problems)
            + f"; found columns {header}"
        )


def _col(header: list[str], rows: list[list[str]], name: str) -> list[str]:
    j = header.index(name)
    return [r[j] for r in rows]


def _coords(header: list[str], rows: list[list[str]]) -> np.ndarray:
    idx = [j for j, c in enumerate(header) if c.startswith("x_")]
    return np.array([[float(r[j]) for j in idx] for r in rows])


def _new_axes(title: str):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    if title:
        ax.set_title(title)
    return fig, ax


def _save(fig, spec: FigureSpec):
    Path(spec.out).parent.mkdir(parents=True, exist_ok=True)
    # strip the writer's software tag so rerenders are byte-identical
    # across matplotlib patch versions
    fig.savefig(spec.out, dpi=spec.dpi, metadata={"Software": None})
    plt.close(fig)


def _render_volume(spec: FigureSpec):
    header, rows = _read_table(spec.inputs[0])
    _check_columns(spec.inputs[0], header, _REQUIRED["volume"], x_cols=False)
    steps = np.array([int(s) for s in _col(header, rows, "step")])
    values = np.array([float(v) for v in _col(header, rows, "value")])
    fig, ax = _new_axes(spec.title or "log-volume vs step")
    ax.plot(steps, values, marker="o", markersize=3, color="tab:blue")
    ax.set_xlabel("integration step (noise end = 0)")
    ax.set_ylabel("log parallelotope volume")
    ax.grid(True, alpha=0.3)
    _save(fig, spec)


def _render_scatter(spec: FigureSpec):
    header, rows = _read_table(spec.inputs[0])
    _check_columns(spec.inputs[0], header, _REQUIRED["scatter"], x_cols=True)
    pts = _coords(header, rows)
    if pts.shape[1] < 2:
        raise SchemaError(f"{spec.inputs[0]}: scatter needs at least 2 coordinates")
    assigned = np.array([int(a) for a in _col(header, rows, "assigned")])
    fig, ax = _new_axes(spec.title or "endpoints by assigned mode")
    for mode in sorted(set(assigned)):
        sel = assigned == mode
        ax.scatter(pts[sel, 0], pts[sel, 1], s=10, label=f"mode {mode}", alpha=0.7)
    ax.set_xlabel("x_0")
    ax.set_ylabel("x_1")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, spec)


def _render_bars(spec: FigureSpec):
    header, rows = _read_table(spec.inputs[0])
    _check_columns(spec.inputs[0], header, _REQUIRED["bars"], x_cols=False)
    # rate per (variant, condition), skipping empty 0/0 rates
    variants = []
    conditions = []
    rates: dict[tuple[str, str], float] = {}
    for r in rows:
        variant = r[header.index("variant")]
        condition = r[header.index("condition")]
        rate = r[header.index("rate")]
        if rate == "":
            continue
        if variant not in variants:
            variants.append(variant)
        if condition not in conditions:
            conditions.append(condition)
        rates[(variant, condition)] = float(rate)
    fig, ax = _new_axes(spec.title or "correction rate per condition")
    width = 0.8 / max(len(variants), 1)
    xs = np.arange(len(conditions))
    for i, variant in enumerate(variants):
        vals = [rates.get((variant, c), 0.0) for c in conditions]
        ax.bar(xs + i * width, vals, width=width, label=variant)
    ax.set_xticks(xs + width * (len(variants) - 1) / 2)
    ax.set_xticklabels(conditions)
    ax.set_ylabel("correction rate")
    ax.set_ylim(0, 1)
    ax.legend()
    _save(fig, spec)


def _render_marginal(spec: FigureSpec):
    tables = []
    for path in spec.inputs:
        header, rows = _read_table(path)
        _check_columns(path, header, [], x_cols=True)
        tables.append(_coords(header, rows))
    a, b = tables
    if a.shape[1] != b.shape[1]:
        raise SchemaError(
            f"endpoint files disagree on dimension: {a.shape[1]} vs {b.shape[1]}"
        )
    dim = a.shape[1]
    fig, axes = plt.subplots(1, dim, figsize=(4.2 * dim, 3.6), squeeze=False)
    labels = [Path(p).stem for p in spec.inputs]
    for j in range(dim):
        ax = axes[0, j]
        lo = min(a[:, j].min(), b[:, j].min())
        hi = max(a[:, j].max(), b[:, j].max())
        bins = np.linspace(lo, hi, 50)
        ax.hist(a[:, j], bins=bins, density=True, alpha=0.5, label=labels[0])
        ax.hist(b[:, j], bins=bins, density=True, alpha=0.5, label=labels[1])
        ax.set_xlabel(f"x_{j}")
        if j == 0:
            ax.set_ylabel("density")
            ax.legend()
    if spec.title:
        fig.suptitle(spec.title)
    _save(fig, spec)


_RENDERERS = {
    "volume": _render_volume,
    "scatter": _render_scatter,
    "bars": _render_bars,
    "marginal": _render_marginal,
}


def render(spec: FigureSpec) -> str:
    """Render the figure described by spec; returns the output path."""
    _RENDERERS[spec.kind](spec)
    return spec.out
