"""Shared helpers for the figure scripts: CSV input and dual-format output."""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")   # batch only, never a window

import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
})

MARKERS = ("o", "s", "^", "d", "v", "*", "x")


class SchemaError(ValueError):
    """The CSV does not carry the columns this figure needs."""


def read_csv(path):
    """CSV as a dict of column name -> list of strings."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty CSV")
        cols = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in cols:
                cols[name].append(row[name])
    return cols


def require_columns(cols, needed, path):
    missing = [c for c in needed if c not in cols]
    if missing:
        raise SchemaError(
            f"{path}: missing column(s) {', '.join(missing)}; "
            f"found {', '.join(cols)}")


def floats(cols, name):
    return [float(v) for v in cols[name]]


def save_figure(fig, out):
    """Write the figure as a raster + vector pair next to each other."""
    out = Path(out)
    stem = out.with_suffix("")
    fig.savefig(stem.with_suffix(".png"), bbox_inches="tight")
    fig.savefig(stem.with_suffix(".pdf"), bbox_inches="tight")
    return stem.with_suffix(".png"), stem.with_suffix(".pdf")


def run_main(fn):
    try:
        sys.exit(fn())
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)
