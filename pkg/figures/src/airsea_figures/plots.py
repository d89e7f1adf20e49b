"""Render figures from the simulator's versioned CSV outputs.

Four figure kinds: ``convergence`` (log-log error vs h with a slope-1
reference), ``aed`` (energy-defect curves per scheme), ``totals``
(per-domain total energies) and ``trace`` (velocity-norm time series).
Scripts consume only the CSV schemas; they never import the simulator.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

KINDS = ("convergence", "aed", "totals", "trace")

SCHEMAS = {
    "convergence": ("N", "h", "dt", "err_l2l2", "rate_l2", "err_l2h1",
                    "rate_h1", "status"),
    "aed": ("t", "ke_atm", "ke_ocean", "diss_atm", "diss_ocean", "aed",
            "total_atm", "total_ocean"),
    "totals": ("t", "ke_atm", "ke_ocean", "diss_atm", "diss_ocean", "aed",
               "total_atm", "total_ocean"),
    "trace": ("t", "norm_atm", "norm_ocean", "blowup_flag"),
}


class SchemaError(ValueError):
    pass


@dataclass
class FigureSpec:
    kind: str
    csv_paths: list[Path]
    out_path: Path
    labels: list[str] = field(default_factory=list)
    xlabel: str = ""
    ylabel: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        self.csv_paths = [Path(p) for p in self.csv_paths]
        self.out_path = Path(self.out_path)
        if not self.labels:
            self.labels = [p.stem for p in self.csv_paths]


def read_columns(path: Path, kind: str) -> dict[str, np.ndarray]:
    """Parse one CSV against the schema of ``kind``.

    Numeric columns become float arrays (blank cells -> NaN); missing
    columns are reported by name.
    """
    expected = SCHEMAS[kind]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file, expected header "
                          f"{','.join(expected)}")
    header = tuple(rows[0])
    for col in expected:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    idx = {col: header.index(col) for col in expected}
    out: dict[str, np.ndarray] = {}
    for col in expected:
        vals = []
        for row in rows[1:]:
            cell = row[idx[col]]
            if col == "status":
                vals.append(cell)
            else:
                vals.append(float(cell) if cell not in ("", None) else np.nan)
        out[col] = (np.asarray(vals) if col != "status"
                    else np.asarray(vals, dtype=object))
    return out


def fitted_slope(h: np.ndarray, err: np.ndarray) -> float:
    """Least-squares slope of log(err) against log(h)."""
    mask = np.isfinite(h) & np.isfinite(err) & (h > 0) & (err > 0)
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[mask]), np.log(err[mask]), 1)[0])


def _plot_convergence(ax, spec):
    slopes = []
    for path, label in zip(spec.csv_paths, spec.labels):
        data = read_columns(path, "convergence")
        ok = data["status"] == "ok"
        h = data["h"][ok]
        for col, style in (("err_l2l2", "o-"), ("err_l2h1", "s--")):
            err = data[col][ok]
            keep = np.isfinite(err)
            if keep.any():
                ax.loglog(h[keep], err[keep], style,
                          label=f"{label} {col[4:]}")
        if np.isfinite(data["err_l2l2"][ok]).any():
            slopes.append(fitted_slope(h, data["err_l2l2"][ok]))
            href = np.array([h.min(), h.max()])
            anchor = data["err_l2l2"][ok][np.argmax(h)]
            ax.loglog(href, anchor * href / h.max(), "k:",
                      label="slope 1" if path == spec.csv_paths[0] else None)
    ax.set_xlabel(spec.xlabel or "h")
    ax.set_ylabel(spec.ylabel or "error")
    return slopes


def _plot_series(ax, spec, columns, default_ylabel, logy=False):
    for path, label in zip(spec.csv_paths, spec.labels):
        data = read_columns(path, spec.kind)
        for col in columns:
            name = f"{label} {col}" if len(columns) > 1 else label
            if logy:
                ax.semilogy(data["t"], np.maximum(data[col], 1e-300),
                            label=name)
            else:
                ax.plot(data["t"], data[col], label=name)
    ax.set_xlabel(spec.xlabel or "t")
    ax.set_ylabel(spec.ylabel or default_ylabel)


def plot(spec: FigureSpec) -> Path:
    """Render one figure; returns the image path."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    if spec.kind == "convergence":
        _plot_convergence(ax, spec)
    elif spec.kind == "aed":
        _plot_series(ax, spec, ("aed",), "absolute energy defect")
    elif spec.kind == "totals":
        _plot_series(ax, spec, ("total_atm", "total_ocean"), "KE + dissipated")
    elif spec.kind == "trace":
        _plot_series(ax, spec, ("norm_atm", "norm_ocean"), "velocity norm",
                     logy=True)
    handles, _ = ax.get_legend_handles_labels()
    if handles:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, dpi=150)
    plt.close(fig)
    return spec.out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="airsea-plot", description="Plot airsea CSV outputs")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--csv", required=True, action="append",
                        help="input CSV (repeatable)")
    parser.add_argument("--label", action="append", default=None,
                        help="legend label per CSV (repeatable)")
    parser.add_argument("--out", required=True, help="output PNG path")
    args = parser.parse_args(argv)
    spec = FigureSpec(kind=args.kind, csv_paths=args.csv,
                      out_path=args.out, labels=args.label or [])
    try:
        plot(spec)
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
