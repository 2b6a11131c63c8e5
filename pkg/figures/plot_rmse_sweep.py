#!/usr/bin/env python3
"""Average RMSE versus a swept quantity (power budget or noise), per method.

Usage: plot_rmse_sweep.py <rmse_summary.csv> <out-image> [--xcol pt_dbm]
"""

import argparse

import matplotlib.pyplot as plt

from _common import MARKERS, read_csv, require_columns, run_main, save_figure

LABELS = {"pt_dbm": "total power budget (dBm)",
          "noise_dbm": "noise power (dBm)"}


def build_figure(csv_path, xcol="pt_dbm"):
    cols = read_csv(csv_path)
    require_columns(cols, ["method", "rmse", xcol], csv_path)
    methods = list(dict.fromkeys(cols["method"]))
    fig, ax = plt.subplots()
    series = {}
    for i, method in enumerate(methods):
        idx = [j for j, m in enumerate(cols["method"]) if m == method]
        pairs = sorted((float(cols[xcol][j]), float(cols["rmse"][j]))
                       for j in idx)
        xs = [a for a, _ in pairs]
        ys = [b for _, b in pairs]
        series[method] = (xs, ys)
        ax.plot(xs, ys, marker=MARKERS[i % len(MARKERS)], label=method)
    ax.set_xlabel(LABELS.get(xcol, xcol))
    ax.set_ylabel("average RMSE (m)")
    ax.legend()
    return fig, series


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("out")
    ap.add_argument("--xcol", default="pt_dbm")
    args = ap.parse_args()
    fig, _ = build_figure(args.csv, args.xcol)
    png, pdf = save_figure(fig, args.out)
    print(f"wrote {png} and {pdf}")
    return 0


if __name__ == "__main__":
    run_main(main)
