"""Command-line entry point: ``balldiff <experiment> [options]`` and ``balldiff describe <experiment>``.

Exit codes: 0 every report passed, 1 a statistical check failed, 2 bad
configuration, 3 numerical failure during a run.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import stats
from .errors import (
    AccuracyError,
    BallDiffError,
    ConfigurationError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    HorizonError,
    SingularityError,
)
from .noise import SEED_ENV, resolve_seed

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from exc
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    m = common.add_argument_group("model")
    m.add_argument("--n", type=int, help="ball dimension")
    m.add_argument("--ell", type=float, help="codimension ell (gamma = 1, g = (n-1+ell)/2 by default)")
    m.add_argument("--gamma", dest="gamma_spec", help="gamma descriptor: const:v | linear:a,b | poly:c0,c1,...")
    m.add_argument("--g", dest="g_spec", help="g descriptor, same syntax as --gamma")
    m.add_argument("--process", choices=ex.PROCESSES, help="process for 'simulate'")
    m.add_argument("--alpha", type=float, help="WF alpha or BESQ dimension of X")
    m.add_argument("--beta", type=float, help="WF beta or BESQ dimension of Y")
    m.add_argument("--delta", type=float, help="BESQ dimension for 'simulate --process besq'")
    m.add_argument("--x0", type=_floats, help="start point, comma-separated")
    r = common.add_argument_group("run")
    r.add_argument("--t", dest="T", type=float, help="horizon")
    r.add_argument("--dt", type=float, help="step size")
    r.add_argument("--dt-list", type=_floats, help="step sizes for refinement experiments")
    r.add_argument("--paths", type=int, help="number of paths")
    r.add_argument("--seed", type=_u64, help=f"64-bit seed (overrides ${SEED_ENV})")
    r.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    r.add_argument("--burn-in", type=float, help="burn-in before stationary sampling (default 5/min g)")
    r.add_argument("--samples-per-path", type=int, help="thinned stationary samples per path")
    o = common.add_argument_group("output")
    o.add_argument("--output-dir", default=".", help="directory for report.json, summary.txt, paths.csv")
    o.add_argument("--dump-paths", action="store_true", help="write paths.csv")

    p = argparse.ArgumentParser(prog="balldiff", description="Seeded Monte Carlo checks for diffusions on the ball and sphere.")
    sub = p.add_subparsers(dest="command", required=True, metavar="<experiment>")
    for name in ex.EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=ex.DESCRIPTIONS[name][0])
    d = sub.add_parser("describe", help="explain an experiment")
    d.add_argument("name")
    return p


def describe(name: str) -> str:
    if name not in ex.DESCRIPTIONS:
        raise ConfigurationError(f"unknown experiment {name!r}; choose from {', '.join(ex.EXPERIMENTS)}")
    title, text = ex.DESCRIPTIONS[name]
    defaults = ", ".join(f"{k}={v}" for k, v in ex.DEFAULTS[name].items())
    return f"{name}: {title}\n\n{text}\n\ndefaults: {defaults}\n"


def write_paths_csv(path: Path, traces) -> int:
    """One row per (path, grid time) on each path's lifetime; returns the row count."""
    k = 1 if traces[0].states.ndim == 1 else traces[0].states.shape[1]
    header = "t," + ",".join(f"comp_{i}" for i in range(k)) + ",path_id"
    rows = 0
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for tr in traces:
            live = tr.alive()
            s = live.states.reshape(len(live), -1)
            pid = 0 if tr.path_id is None else int(tr.path_id)
            block = np.column_stack([live.times, s])
            for row in block:
                fh.write(",".join(f"{v:.17g}" for v in row) + f",{pid}\n")
            rows += len(live)
    return rows


def write_outputs(cfg: ex.ExperimentConfig, result: ex.ExperimentResult) -> stats.Summary:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = stats.merge_reports(result.reports)
    with open(out / "report.json", "w") as fh:
        json.dump([r.to_json() for r in result.reports], fh, indent=2, sort_keys=False)
        fh.write("\n")
    notes = list(result.notes)
    if cfg.dump_paths:
        if result.traces:
            n_rows = write_paths_csv(out / "paths.csv", result.traces)
            notes.append(f"paths.csv: {n_rows} rows")
        else:
            notes.append("this experiment keeps no path traces; paths.csv not written")
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    lines = [
        f"experiment: {cfg.experiment}",
        f"timestamp: {stamp}",
        f"seed: {cfg.seed}",
        f"config_digest: {stats.config_digest(cfg.as_dict())}",
        f"summary_digest: {summary.digest}",
        f"overall: {'PASS' if summary.passed else 'FAIL'} ({summary.count} report(s))",
        "",
        *(r.line() for r in result.reports),
    ]
    if notes:
        lines += ["", "notes:", *(f"  {n}" for n in notes)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return summary


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "describe":
            sys.stdout.write(describe(args.name))
            return EXIT_PASS
        opts = {k: v for k, v in vars(args).items() if k not in ("command", "output_dir", "dump_paths")}
        opts["seed"] = resolve_seed(opts.get("seed"))
        cfg = ex.make_config(args.command, **opts)
        cfg.output_dir = args.output_dir
        cfg.dump_paths = args.dump_paths
        result = ex.run_experiment(cfg)
        summary = write_outputs(cfg, result)
    except (ConfigurationError, DomainError, DimensionError, DegenerateInputError) as exc:
        print(f"balldiff: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularityError, HorizonError, AccuracyError, FloatingPointError) as exc:
        step = getattr(exc, "step", None)
        where = f" (step {step})" if step is not None and not str(exc).startswith("step") else ""
        print(f"balldiff: numerical error{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BallDiffError as exc:
        print(f"balldiff: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for r in result.reports:
        print(r.line())
    return EXIT_PASS if summary.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
