#!/usr/bin/env python3
"""Tracking accuracy against selector runtime (one point per method).

Usage: plot_accuracy_runtime.py <rmse_summary.csv> <bench.csv> <out-image>
Methods present in both files are joined by name; bench rows are the
selector timings at the smallest benchmarked size.
"""

import argparse

import matplotlib.pyplot as plt

from _common import MARKERS, read_csv, require_columns, run_main, save_figure


def build_figure(rmse_csv, bench_csv):
    rmse_cols = read_csv(rmse_csv)
    require_columns(rmse_cols, ["method", "rmse"], rmse_csv)
    bench_cols = read_csv(bench_csv)
    require_columns(bench_cols, ["kind", "method", "n", "seconds_min"],
                    bench_csv)

    rmse = {}
    for m, v in zip(rmse_cols["method"], rmse_cols["rmse"]):
        rmse.setdefault(m, float(v))
    seconds = {}
    for kind, m, n, sec in zip(bench_cols["kind"], bench_cols["method"],
                               bench_cols["n"], bench_cols["seconds_min"]):
        if kind != "selector":
            continue
        key = (m, float(n) if n else 0.0)
        if m not in seconds or key[1] < seconds[m][0]:
            seconds[m] = (key[1], float(sec))

    fig, ax = plt.subplots()
    series = {}
    i = 0
    for m in rmse:
        if m not in seconds:
            continue
        x, y = seconds[m][1], rmse[m]
        series[m] = (x, y)
        ax.scatter([x], [y], marker=MARKERS[i % len(MARKERS)], s=60, label=m)
        i += 1
    ax.set_xscale("log")
    ax.set_xlabel("selector wall-clock (s)")
    ax.set_ylabel("average RMSE (m)")
    ax.legend()
    return fig, series


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("rmse_csv")
    ap.add_argument("bench_csv")
    ap.add_argument("out")
    args = ap.parse_args()
    fig, series = build_figure(args.rmse_csv, args.bench_csv)
    if not series:
        raise SystemExit("error: no methods common to both CSVs")
    png, pdf = save_figure(fig, args.out)
    print(f"wrote {png} and {pdf}")
    return 0


if __name__ == "__main__":
    run_main(main)
