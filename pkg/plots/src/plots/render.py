"""Render figures from the documented CSV/JSON artifact schemas.

Four figure kinds:

- ``sphere-density``: side-by-side empirical vs reference heatmaps on the
  (z-band, longitude-sector) equal-area grid with a shared color scale.
- ``trace``: energy / gradient-norm time series, with the constant bound
  line when a report JSON is supplied alongside the series CSV.
- ``sync-decay``: deviation-vs-horizon curve on a logarithmic scale.
- ``probe``: mean and max log-ratio curves of the two-trajectory probe.

Rendering only reads the artifacts; it never recomputes any physics. Output
is a metadata-stripped PNG, so rerunning on identical inputs overwrites a
byte-identical file.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("sphere-density", "trace", "sync-decay", "probe")

_DPI = 150
# strip the Software text chunk so PNG bytes depend only on the figure
_SAVE_KW = {"dpi": _DPI, "metadata": {"Software": None}}


class SchemaError(ValueError):
    """An input file is missing or does not match its documented schema."""


@dataclass(frozen=True)
class PlotJob:
    kind: str
    inputs: tuple
    output: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; choose from {KINDS}")
        if not self.inputs:
            raise SchemaError("at least one input file is required")
        for path in self.inputs:
            if not Path(path).is_file():
                raise SchemaError(f"input file not found: {path}")


def _read_csv(path, required_columns) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        missing = [c for c in required_columns if c not in columns]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}; found {columns}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    try:
        return {
            c: np.array([float(row[c]) for row in rows]) for c in required_columns
        }
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: non-numeric data: {exc}") from exc


def _split_inputs(inputs):
    csvs = [p for p in inputs if str(p).endswith(".csv")]
    jsons = [p for p in inputs if str(p).endswith(".json")]
    if not csvs:
        raise SchemaError("no CSV input supplied")
    return csvs, jsons


def _save(fig, output) -> None:
    fig.savefig(output, **_SAVE_KW)
    plt.close(fig)


# -- figure kinds -------------------------------------------------------------

def _render_sphere_density(inputs, output) -> None:
    csvs, _ = _split_inputs(inputs)
    data = _read_csv(
        csvs[0], ["band", "sector", "count", "area", "empirical_mass", "reference_mass"]
    )
    bands = data["band"].astype(int)
    sectors = data["sector"].astype(int)
    nz, nphi = bands.max() + 1, sectors.max() + 1
    emp = np.zeros((nz, nphi))
    ref = np.zeros((nz, nphi))
    emp[bands, sectors] = data["empirical_mass"]
    ref[bands, sectors] = data["reference_mass"]

    vmax = max(emp.max(), ref.max())
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    for ax, grid_vals, title in ((axes[0], emp, "empirical"), (axes[1], ref, "reference")):
        im = ax.imshow(
            grid_vals, origin="lower", aspect="auto", vmin=0.0, vmax=vmax,
            extent=(-np.pi, np.pi, -1.0, 1.0), cmap="viridis",
        )
        ax.set_title(title)
        ax.set_xlabel("longitude")
    axes[0].set_ylabel("z = cos(colatitude)")
    fig.colorbar(im, ax=axes, label="bin mass")
    pos = emp[emp > 0]
    ratio = float(pos.max() / pos.min()) if pos.size else float("inf")
    fig.suptitle(f"bin mass on the equal-area grid (max/min color ratio {ratio:.3g})")
    _save(fig, output)


def _render_trace(inputs, output) -> None:
    csvs, jsons = _split_inputs(inputs)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in csvs:
        with open(path, newline="") as fh:
            columns = (csv.DictReader(fh).fieldnames) or []
        grad_col = next(
            (c for c in ("mean_grad_norm_sq", "grad_norm_sq") if c in columns), None
        )
        energy_col = next(
            (c for c in ("mean_energy", "energy") if c in columns), None
        )
        if grad_col is None or "time" not in columns:
            raise SchemaError(
                f"{path}: expected a time series with a gradient-norm column"
            )
        data = _read_csv(path, ["time", grad_col] + ([energy_col] if energy_col else []))
        label = Path(path).stem
        ax.plot(data["time"], data[grad_col], label=f"{label}: grad norm sq")
        if energy_col:
            ax.plot(
                data["time"], data[energy_col], linestyle="--",
                label=f"{label}: energy",
            )
    for path in jsons:
        with open(path) as fh:
            report = json.load(fh)
        if "rhs" in report:
            ax.axhline(
                report["rhs"], color="black", linestyle=":",
                label=f"bound {report.get('name', 'rhs')}",
            )
    ax.set_xlabel("time")
    ax.set_ylabel("value")
    ax.legend(fontsize="small")
    ax.set_title("energy and gradient-norm traces")
    _save(fig, output)


def _render_sync_decay(inputs, output) -> None:
    csvs, _ = _split_inputs(inputs)
    data = _read_csv(csvs[0], ["horizon", "sup_deviation"])
    fig, ax = plt.subplots(figsize=(6, 4))
    positive = data["sup_deviation"] > 0
    ax.plot(data["horizon"], np.maximum(data["sup_deviation"], 1e-300), marker="o")
    if np.any(positive):
        ax.set_yscale("log")
    ax.set_xlabel("horizon")
    ax.set_ylabel("sup deviation")
    ax.set_title("synchronization deviation vs horizon")
    _save(fig, output)


def _render_probe(inputs, output) -> None:
    csvs, jsons = _split_inputs(inputs)
    data = _read_csv(csvs[0], ["time", "mean_log_ratio", "max_log_ratio"])
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(data["time"], data["mean_log_ratio"], label="mean log ratio")
    ax.plot(data["time"], data["max_log_ratio"], label="max log ratio")
    for path in jsons:
        with open(path) as fh:
            report = json.load(fh)
        if {"intercept", "slope", "margin"} <= report.keys():
            envelope = (
                report["intercept"] + report["slope"] * data["time"] + report["margin"]
            )
            ax.plot(data["time"], envelope, linestyle=":", color="black", label="envelope")
    ax.set_xlabel("time")
    ax.set_ylabel("log gap ratio")
    ax.legend(fontsize="small")
    ax.set_title("gap ratio of the coupled-trajectory probe")
    _save(fig, output)


_RENDERERS = {
    "sphere-density": _render_sphere_density,
    "trace": _render_trace,
    "sync-decay": _render_sync_decay,
    "probe": _render_probe,
}


def render(job: PlotJob) -> str:
    """Render one figure; returns the output path."""
    _RENDERERS[job.kind](job.inputs, job.output)
    return job.output
