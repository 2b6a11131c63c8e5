"""Command-line entry point: track / train / converge / bench.

Every command reads one JSON scenario config, writes its results as
CSV/JSON files under --out, and records a run manifest.  All randomness
derives from --seed through the documented stream splitting, so reruns
with the same inputs reproduce the output files byte for byte (the
manifest's timestamps are the only exception).
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dan as dan_mod
from . import tracker
from .baselines import exhaustive_select, nearest_select, oracle_power
from .errors import EnumerationCapError, InvalidArgumentError, SchemaError
from .fisher import SelectionContext
from .mm_admm import MMConfig, mm_admm_select
from .power import PowerProblem, solve_water_level
from .scenario import TargetState, config_fingerprint, load_setup, make_uniform_nodes

TRACK_METHODS = ("dan", "mm-admm-1", "mm-admm-2", "es", "nearest")


def _write_manifest(out: Path, command: str, args: argparse.Namespace,
                    cfg: dict) -> None:
    doc = {
        "command": command,
        "config": str(args.config),
        "config_fingerprint": config_fingerprint(cfg),
        "seed": args.seed,
        "out": str(out),
        "argv": sys.argv[1:],
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    def cell(v):
        if isinstance(v, float):
            return repr(v)
        return str(v)
    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _load_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SchemaError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}")


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = dict(cfg)
    if getattr(args, "nmax", None) is not None:
        cfg["nmax"] = args.nmax
    if getattr(args, "pt_dbm", None) is not None and ":" not in str(args.pt_dbm):
        cfg["pt_dbm"] = float(args.pt_dbm)
    return cfg


def _parse_sweep(spec: str | None, default: float) -> list[float]:
    """Either a single value or start:step:stop (inclusive)."""
    if spec is None:
        return [default]
    s = str(spec)
    if ":" not in s:
        return [float(s)]
    parts = s.split(":")
    if len(parts) != 3:
        raise SchemaError("sweep must be start:step:stop")
    start, step, stop = (float(x) for x in parts)
    if step <= 0 or stop < start:
        raise SchemaError("sweep needs step > 0 and stop >= start")
    out, v = [], start
    while v <= stop + 1e-9:
        out.append(round(v, 9))
        v += step
    return out


def _require_params(args, for_method: str) -> dan_mod.DanParams:
    if not getattr(args, "params", None):
        raise InvalidArgumentError(
            f"method {for_method!r} needs trained parameters; run "
            "`pmntrack train --config <cfg> --out <dir>` and pass --params "
            "<dir>/dan_params.json")
    return dan_mod.load_params(args.params)


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in TRACK_METHODS:
            raise InvalidArgumentError(
                f"unknown method {m!r}; choose from {', '.join(TRACK_METHODS)}")
    params = _require_params(args, "dan") if "dan" in methods else None
    budgets = _parse_sweep(args.pt_dbm, float(cfg.get("pt_dbm", 30.0)))

    summary_rows = []
    for pt_dbm in budgets:
        run_cfg = dict(cfg)
        run_cfg["pt_dbm"] = pt_dbm
        setup = load_setup(run_cfg)
        for method in methods:
            ao = tracker.AoConfig(selector=method, power=args.power)
            recs = tracker.run_trials(setup, args.frames, ao, params,
                                      args.seed, args.nmc)
            rmse = tracker.monte_carlo_rmse(recs)
            summary_rows.append([method, args.power, float(pt_dbm),
                                 float(cfg.get("noise_dbm", -90.0)),
                                 setup.scenario.Nmax, args.frames, args.nmc,
                                 float(rmse)])
            if len(budgets) == 1:
                tracker.records_to_csv(recs, out / f"tracks_{method}.csv")
    _write_csv(out / "rmse_summary.csv",
               ["method", "power", "pt_dbm", "noise_dbm", "nmax", "frames",
                "nmc", "rmse"], summary_rows)
    _write_manifest(out, "track", args, cfg)
    print(f"wrote {out / 'rmse_summary.csv'} ({len(summary_rows)} rows)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = load_setup(cfg)
    try:
        dataset = dan_mod.make_training_set(setup, args.n_train, args.seed)
    except EnumerationCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("lower N or Nmax in the config so exhaustive labels stay "
              "enumerable", file=sys.stderr)
        return 2
    fp = config_fingerprint(cfg)
    dan_mod.save_dataset(dataset, out / "train_set.jsonl", fp)
    tcfg = dan_mod.TrainConfig(lr=args.lr, n_train=args.n_train,
                               epochs=args.epochs, seed=args.seed)
    params0 = dan_mod.default_params(args.layers)
    params, losses = dan_mod.train_dan(dataset, params0, tcfg)
    dan_mod.save_params(params, out / "dan_params.json", seed=args.seed,
                        scenario_fingerprint=fp,
                        dataset_fingerprint=config_fingerprint(
                            {"n": args.n_train, "seed": args.seed, "scenario": fp}))
    _write_csv(out / "loss_curve.csv", ["epoch", "loss"],
               [[i + 1, float(l)] for i, l in enumerate(losses)])
    _write_manifest(out, "train", args, cfg)
    print(f"wrote {out / 'dan_params.json'} (final loss {losses[-1]:.6f})")
    return 0


def cmd_converge(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = load_setup(cfg)
    sc = setup.scenario
    if sc.Nmax < 1:
        raise InvalidArgumentError("empty selection: Nmax must be >= 1")
    params = _require_params(args, "dan")

    inst = dan_mod.make_training_set(setup, 1, args.seed)[0]
    rows = []
    for method, variant in (("mm-admm-1", "trace"), ("mm-admm-2", "max-eig")):
        u, trace = mm_admm_select(inst.jp, inst.mbar, inst.p, inst.u0,
                                  variant, MMConfig())
        diffs = np.diff(np.array(trace.cost_per_iter))
        if diffs.size and float(np.max(diffs)) > 1e-8:
            raise RuntimeError(f"{method} trace is not monotone")
        rows += [[method, i, float(c), float(r)] for i, (c, r) in
                 enumerate(zip(trace.cost_per_iter, trace.residual_per_iter))]
    ctx = SelectionContext(jp=inst.jp, mbar=inst.mbar)
    _, dtrace = dan_mod.dan_forward(ctx, inst.p, inst.u0, params)
    rows += [["dan", i, float(c), float(r)] for i, (c, r) in
             enumerate(zip(dtrace.cost_per_iter, dtrace.residual_per_iter))]
    _write_csv(out / "converge.csv", ["method", "iteration", "cost", "residual"], rows)
    _write_manifest(out, "converge", args, cfg)
    print(f"wrote {out / 'converge.csv'} ({len(rows)} rows)")
    return 0


def _time_call(fn, repeat: int) -> tuple[float, float]:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    times.sort()
    return times[0], times[len(times) // 2]


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = _require_params(args, "dan")
    rows = []
    dan_vs_mm_ok = True
    n_inst = 5      # sum wall-clock over a small instance set per size
    for n in (16, 32, 64):
        ncfg = dict(cfg)
        ncfg["nodes"] = make_uniform_nodes(n, 400.0, args.seed + n)
        setup = load_setup(ncfg)
        insts = dan_mod.make_training_set(setup, n_inst, args.seed)
        ctxs = [SelectionContext(jp=i.jp, mbar=i.mbar) for i in insts]
        timings = {}
        for method in ("nearest", "es", "mm-admm-1", "mm-admm-2", "dan"):
            if method == "nearest":
                preds = [TargetState(x=i.x) for i in insts]
                fn = lambda: [nearest_select(setup.scenario, s,
                                             setup.scenario.Nmax)
                              for s in preds]
            elif method == "es":
                fn = lambda: [exhaustive_select(i.jp, i.mbar, i.p,
                                                setup.scenario.Nmax)
                              for i in insts]
            elif method == "dan":
                fn = lambda: [dan_mod.dan_forward(c, i.p, i.u0, params)
                              for c, i in zip(ctxs, insts)]
            else:
                variant = "trace" if method == "mm-admm-1" else "max-eig"
                fn = lambda v=variant: [mm_admm_select(i.jp, i.mbar, i.p,
                                                       i.u0, v, MMConfig())
                                        for i in insts]
            tmin, tmed = _time_call(fn, args.repeat)
            timings[method] = tmin
            rows.append(["selector", method, n, "", args.repeat,
                         float(tmin), float(tmed)])
        if timings["dan"] >= min(timings["mm-admm-1"], timings["mm-admm-2"]):
            dan_vs_mm_ok = False

    # power allocation at Q = 6
    setup = load_setup(cfg)
    q = 6
    insts = dan_mod.make_training_set(setup, q, args.seed + 1)
    jp = np.stack([inst.jp for inst in insts])
    st = np.stack([np.einsum("n,nij->ij", inst.label, inst.mbar.Mbar)
                   for inst in insts])
    prob = PowerProblem(jp=jp, st=st, Pt=setup.scenario.Pt,
                        Pmin=setup.scenario.Pt / (2 * q))
    t_fp = _time_call(lambda: solve_water_level(prob), args.repeat)
    t_or = _time_call(lambda: oracle_power(prob), args.repeat)
    rows.append(["power", "fpwf", "", q, args.repeat, float(t_fp[0]), float(t_fp[1])])
    rows.append(["power", "oracle", "", q, args.repeat, float(t_or[0]), float(t_or[1])])

    _write_csv(out / "bench.csv",
               ["kind", "method", "n", "q", "repeat", "seconds_min",
                "seconds_median"], rows)
    _write_manifest(out, "bench", args, cfg)
    if not dan_vs_mm_ok:
        print("warning: DAN was not faster than MM-ADMM on some size",
              file=sys.stderr)
        return 1
    if t_fp[0] >= t_or[0]:
        print("warning: FP-WF was not faster than the oracle", file=sys.stderr)
        return 1
    print(f"wrote {out / 'bench.csv'} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pmntrack",
        description="Sensing-node selection and power allocation simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("track", help="Monte-Carlo tracking runs")
    common(p)
    p.add_argument("--methods", default="dan,es,nearest",
                   help="comma list: " + ",".join(TRACK_METHODS))
    p.add_argument("--power", default="fpwf",
                   choices=tracker.POWER_METHODS)
    p.add_argument("--nmc", type=int, default=100, help="Monte-Carlo trials")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--pt-dbm", default=None,
                   help="power budget in dBm, single value or start:step:stop")
    p.add_argument("--params", default=None, help="trained DAN params JSON")
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("train", help="generate labels and train the DAN")
    common(p)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--nmax", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("converge", help="per-iteration cost traces")
    common(p)
    p.add_argument("--params", required=True, help="trained DAN params JSON")
    p.add_argument("--nmax", type=int, default=None)
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("bench", help="relative timing of the methods")
    common(p)
    p.add_argument("--params", required=True, help="trained DAN params JSON")
    p.add_argument("--repeat", type=int, default=3)
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidArgumentError, SchemaError, EnumerationCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
