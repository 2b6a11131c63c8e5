#!/usr/bin/env python3
"""Per-frame position RMSE from per-trial track CSVs, one line per file.

Usage: plot_rmse_frames.py <tracks_a.csv> [<tracks_b.csv> ...] <out-image>
The method label is taken from the file name (tracks_<method>.csv).
"""

import argparse
import math
from pathlib import Path

import matplotlib.pyplot as plt

from _common import MARKERS, read_csv, require_columns, run_main, save_figure

NEEDED = ["trial", "frame", "true_rx", "true_ry", "est_rx", "est_ry"]


def frame_rmse(csv_path):
    cols = read_csv(csv_path)
    require_columns(cols, NEEDED, csv_path)
    acc = {}
    for i in range(len(cols["frame"])):
        k = int(cols["frame"][i])
        dx = float(cols["true_rx"][i]) - float(cols["est_rx"][i])
        dy = float(cols["true_ry"][i]) - float(cols["est_ry"][i])
        acc.setdefault(k, []).append(dx * dx + dy * dy)
    frames = sorted(acc)
    return frames, [math.sqrt(sum(acc[k]) / len(acc[k])) for k in frames]


def build_figure(csv_paths):
    fig, ax = plt.subplots()
    series = {}
    for i, path in enumerate(csv_paths):
        label = Path(path).stem.replace("tracks_", "")
        frames, rmse = frame_rmse(path)
        series[label] = (frames, rmse)
        ax.plot(frames, rmse, marker=MARKERS[i % len(MARKERS)], label=label)
    ax.set_xlabel("tracking frame")
    ax.set_ylabel("position RMSE (m)")
    ax.legend()
    return fig, series


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csvs", nargs="+")
    ap.add_argument("out")
    args = ap.parse_args()
    fig, _ = build_figure(args.csvs)
    png, pdf = save_figure(fig, args.out)
    print(f"wrote {png} and {pdf}")
    return 0


if __name__ == "__main__":
    run_main(main)
