"""Figure rendering from sweep CSVs.

Four figure ids reproduce the study plots: ``power-rmse`` (channel-level
RMSE against the bounds vs transmit power), ``power-state`` (position and
rotation errors vs power), ``rho`` (every bound vs the power split, log
scale), and ``scatterers`` (error quantiles vs scatterer count).  Output
is written in both raster (PNG) and vector (SVG) form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import HrislocError, MissingColumn

FIGURE_IDS = ("power-rmse", "power-state", "rho", "scatterers")

_BOUND_STYLE = dict(linestyle="-", marker="o", markersize=4, linewidth=1.4)
_RMSE_STYLE = dict(linestyle="--", marker="v", markersize=4, linewidth=1.4)


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: id, input CSV paths, output image path."""

    figure_id: str
    inputs: tuple
    output: str

    def __post_init__(self):
        if self.figure_id not in FIGURE_IDS:
            raise HrislocError(
                f"unknown figure id '{self.figure_id}'; valid: {', '.join(FIGURE_IDS)}"
            )
        if not self.inputs:
            raise HrislocError("at least one input CSV is required")


def read_csv_columns(path):
    """Parse a sweep CSV into a column-name -> float-array mapping."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise HrislocError(f"{path} is empty")
        rows = list(reader)
    if not rows:
        raise HrislocError(f"{path} has a header but no data rows")
    columns = {}
    for name in reader.fieldnames:
        values = [row[name] for row in rows]
        try:
            columns[name] = np.array([float(v) for v in values])
        except ValueError:
            columns[name] = np.array(values)
    return columns


def _column(columns, name, path):
    if name not in columns:
        raise MissingColumn(name, path)
    return columns[name]


def _merged_columns(paths):
    """Concatenate the rows of several CSVs sharing one schema."""
    merged = None
    for path in paths:
        cols = read_csv_columns(path)
        if merged is None:
            merged = {k: [v] for k, v in cols.items()}
        else:
            for k in merged:
                if k not in cols:
                    raise MissingColumn(k, path)
                merged[k].append(cols[k])
    return {k: np.concatenate(v) for k, v in merged.items()}


def _pair_series(ax, x, columns, metrics, path):
    for key, label in metrics:
        bound = _column(columns, f"crb_{key}", path)
        rmse = _column(columns, f"rmse_{key}", path)
        line = ax.plot(x, bound, label=f"bound {label}", **_BOUND_STYLE)[0]
        ax.plot(x, rmse, label=f"rmse {label}", color=line.get_color(), **_RMSE_STYLE)


def _fig_power_rmse(columns, path):
    x = _column(columns, "sweep_value", path)
    order = np.argsort(x)
    columns = {k: v[order] if np.ndim(v) else v for k, v in columns.items()}
    x = x[order]
    fig, (ax_toa, ax_ang) = plt.subplots(2, 1, figsize=(7.0, 7.0), sharex=True)
    _pair_series(
        ax_toa,
        x,
        columns,
        [("teb_br_m", "toa bs-ris"), ("teb_bu_m", "toa bs-ue"), ("teb_bru_m", "toa reflected")],
        path,
    )
    ax_toa.set_ylabel("RMSE of TOA [m]")
    _pair_series(
        ax_ang,
        x,
        columns,
        [
            ("adeb_br_rad", "aod bs-ris"),
            ("adeb_bu_rad", "aod bs-ue"),
            ("adeb_ru_rad", "aod ris-ue"),
            ("aaeb_rb_rad", "aoa ris"),
        ],
        path,
    )
    ax_ang.set_ylabel("RMSE of angles [rad]")
    ax_ang.set_xlabel("transmit power [dBm]")
    for ax in (ax_toa, ax_ang):
        ax.set_yscale("log")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=7, ncol=2)
    return fig


def _fig_power_state(columns, path):
    x = _column(columns, "sweep_value", path)
    order = np.argsort(x)
    columns = {k: v[order] if np.ndim(v) else v for k, v in columns.items()}
    x = x[order]
    fig, (ax_pos, ax_rot) = plt.subplots(2, 1, figsize=(7.0, 7.0), sharex=True)
    _pair_series(
        ax_pos, x, columns, [("peb_r_m", "ris position"), ("peb_u_m", "ue position")], path
    )
    ax_pos.set_ylabel("RMSE of position [m]")
    _pair_series(ax_rot, x, columns, [("oeb", "rotation")], path)
    ax_rot.set_ylabel("RMSE of rotation [Frobenius]")
    ax_rot.set_xlabel("transmit power [dBm]")
    for ax in (ax_pos, ax_rot):
        ax.set_yscale("log")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    return fig


_RHO_SERIES = (
    ("peb_r_m", "peb ris [m]"),
    ("peb_u_m", "peb ue [m]"),
    ("teb_br_m", "teb bs-ris [m]"),
    ("teb_bu_m", "teb bs-ue [m]"),
    ("teb_bru_m", "teb reflected [m]"),
    ("oeb", "oeb"),
)


def _fig_rho(columns, path):
    x = _column(columns, "rho", path)
    order = np.argsort(x)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for key, label in _RHO_SERIES:
        ax.plot(x[order], _column(columns, key, path)[order], label=label, **_BOUND_STYLE)
    ax.set_yscale("log")
    ax.set_xlabel("power splitting ratio")
    ax.set_ylabel("bound value")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    return fig


def _fig_scatterers(columns, path):
    x = _column(columns, "sweep_value", path)
    order = np.argsort(x)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for key, label in (
        ("peb_r_m", "ris position [m]"),
        ("peb_u_m", "ue position [m]"),
        ("oeb", "rotation"),
    ):
        med = _column(columns, f"median_{key}", path)[order]
        q90 = _column(columns, f"q90_{key}", path)[order]
        line = ax.plot(x[order], med, label=f"median {label}", **_BOUND_STYLE)[0]
        ax.plot(
            x[order], q90, label=f"q90 {label}", color=line.get_color(), **_RMSE_STYLE
        )
    ax.set_yscale("log")
    ax.set_xlabel("number of scatterers")
    ax.set_ylabel("error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    return fig


_RENDERERS = {
    "power-rmse": _fig_power_rmse,
    "power-state": _fig_power_state,
    "rho": _fig_rho,
    "scatterers": _fig_scatterers,
}


def render(spec: FigureSpec):
    """Render one figure to the requested path plus its vector/raster twin.

    Returns the list of written paths."""
    columns = _merged_columns(spec.inputs)
    fig = _RENDERERS[spec.figure_id](columns, spec.inputs[0])
    fig.suptitle(spec.figure_id)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    twin_suffix = ".svg" if out.suffix.lower() == ".png" else ".png"
    written = []
    for path in (out, out.with_suffix(twin_suffix)):
        fig.savefig(path, dpi=150, bbox_inches="tight")
        written.append(str(path))
    plt.close(fig)
    return written
