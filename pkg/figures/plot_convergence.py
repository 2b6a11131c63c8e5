#!/usr/bin/env python3
"""Cost over iterations/layers, one line per method.

Usage: plot_convergence.py <converge.csv> <out-image>
"""

import argparse

import matplotlib.pyplot as plt

from _common import MARKERS, read_csv, require_columns, run_main, save_figure


def build_figure(csv_path):
    cols = read_csv(csv_path)
    require_columns(cols, ["method", "iteration", "cost"], csv_path)
    methods = list(dict.fromkeys(cols["method"]))
    fig, ax = plt.subplots()
    series = {}
    for i, method in enumerate(methods):
        idx = [j for j, m in enumerate(cols["method"]) if m == method]
        it = [int(cols["iteration"][j]) for j in idx]
        cost = [float(cols["cost"][j]) for j in idx]
        series[method] = (it, cost)
        ax.plot(it, cost, marker=MARKERS[i % len(MARKERS)], markersize=4,
                label=method)
    ax.set_xlabel("iteration / layer")
    ax.set_ylabel("cost (log-det of the error bound)")
    ax.legend()
    return fig, series


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("out")
    args = ap.parse_args()
    fig, _ = build_figure(args.csv)
    png, pdf = save_figure(fig, args.out)
    print(f"wrote {png} and {pdf}")
    return 0


if __name__ == "__main__":
    run_main(main)
