"""Command line interface: run experiments, sweep parameters, print reports.

Configuration comes from a flat key = value text file ('#' starts a
comment; h0 accepts fractions like 1/8), overridden by command line
flags.  The default worker count can also be set through the
MLSAMP_WORKERS environment variable.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import fields

from . import driver


def _parse_scalar(key, raw):
    raw = raw.strip()
    if key in ("pilot_nus",):
        return tuple(int(p) for p in raw.replace(",", " ").split())
    if "/" in raw:
        num, den = raw.split("/", 1)
        return float(num) / float(den)
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw


def load_config_file(path):
    """Flat key = value config; keys match ExperimentConfig fields."""
    values = {}
    valid = {f.name for f in fields(driver.ExperimentConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in valid:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_scalar(key, raw)
    return values


def _add_override_flags(p):
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--dim", type=int, choices=(1, 2))
    p.add_argument("--h0", type=str, help="coarsest mesh width (e.g. 1/8)")
    p.add_argument("--s", type=int, help="mesh refinement factor")
    p.add_argument("--degree", type=int, choices=(1, 2, 3))
    p.add_argument("--epsilon", type=float, help="total error tolerance")
    p.add_argument("--sampler", choices=("sc", "mc"))
    p.add_argument("--mode", choices=("single", "multilevel"))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--cost-metric", dest="cost_metric", choices=("model", "wall"))


def _build_config(args):
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    for key in (
        "dim",
        "s",
        "degree",
        "epsilon",
        "sampler",
        "mode",
        "seed",
        "workers",
        "cost_metric",
    ):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "h0", None) is not None:
        values["h0"] = _parse_scalar("h0", args.h0)
    return driver.ExperimentConfig(**values)


def cmd_run(args):
    config = _build_config(args)
    report = driver.run_experiment(config)
    driver.emit_report(report, args.out)
    print(f"wrote levels.csv, summary.json, estimate.csv under {args.out}")
    _print_report_lines(report)
    return 0


def _print_report_lines(report):
    print(f"mode={report.config.mode} sampler={report.config.sampler} "
          f"eps={report.config.epsilon:g}")
    print(" level          h        M   nu     cost_model    err_space   err_sample")
    for r in report.rows:
        print(
            f"{r.level:6d} {r.h:10.5g} {r.M:8d} {r.nu:4d} {r.cost_model:14.6g}"
            f" {r.err_space:12.4g} {r.err_sample:12.4g}"
        )
    print(
        f"error bound {report.err_space + report.err_sample:.4g} "
        f"(space {report.err_space:.4g} + sample {report.err_sample:.4g})"
    )
    print(
        f"cost: plan {report.plan_cost_model:.6g} model units, "
        f"total {report.total_cost_model:.6g} incl. diagnostics"
    )


def cmd_sweep(args):
    config = _build_config(args)
    values = [_parse_scalar("value", v) for v in args.values.split(",")]
    rows = []
    for v in values:
        overrides = {args.param: v}
        cfg_kwargs = {**_config_as_kwargs(config), **overrides}
        cfg = driver.ExperimentConfig(**cfg_kwargs)
        try:
            rep = driver.run_experiment(cfg)
            rows.append(
                {
                    args.param: v,
                    "levels": rep.rows[-1].level,
                    "plan_cost_model": rep.plan_cost_model,
                    "total_cost_model": rep.total_cost_model,
                    "err_space": rep.err_space,
                    "err_sample": rep.err_sample,
                }
            )
            print(
                f"{args.param}={v}: levels={rep.rows[-1].level} "
                f"plan_cost={rep.plan_cost_model:.6g} total={rep.total_cost_model:.6g}"
            )
        except driver.ToleranceError as exc:
            rows.append({args.param: v, "error": str(exc)})
            print(f"{args.param}={v}: failed ({exc})")
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    keys = [args.param, "levels", "plan_cost_model", "total_cost_model",
            "err_space", "err_sample", "error"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {path}")
    return 0


def _config_as_kwargs(config):
    return {f.name: getattr(config, f.name) for f in fields(driver.ExperimentConfig)}


def cmd_report(args):
    path = os.path.join(args.out, "summary.json")
    with open(path, encoding="utf-8") as fh:
        summary = json.load(fh)
    cfg = summary["config"]
    print(f"run: dim={cfg['dim']} sampler={cfg['sampler']} mode={cfg['mode']} "
          f"eps={cfg['epsilon']:g} seed={cfg['seed']}")
    print(f"error bound: {summary['err_total_bound']:.4g} "
          f"(space {summary['err_space']:.4g}, sample {summary['err_sample']:.4g})")
    print(f"cost: plan {summary['plan_cost_model']:.6g}, "
          f"total {summary['total_cost_model']:.6g} model units")
    rates = summary["rates"]
    print(f"rates: alpha={rates['alpha']:.3g} beta={rates['beta']:.3g} "
          f"gamma={rates['gamma']:.3g} mu2={rates['mu2']:.3g} mu1={rates['mu1']:g}")
    levels_path = os.path.join(args.out, "levels.csv")
    if os.path.exists(levels_path):
        with open(levels_path, encoding="utf-8") as fh:
            print(fh.read().rstrip())
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mlsamp",
        description="Single- and multilevel MC / sparse-grid collocation "
        "estimation of the mean solution of an elliptic PDE with a random "
        "coefficient.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and emit reports")
    _add_override_flags(p_run)
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run over a parameter range")
    _add_override_flags(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         choices=("s", "degree", "epsilon", "n_params"))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated parameter values")
    p_sweep.add_argument("--out", default="out", help="output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="print a summary of an emitted run")
    p_rep.add_argument("--out", default="out", help="directory holding summary.json")
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except driver.ToleranceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
