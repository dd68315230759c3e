"""Command-line entry point ``ace``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from itertools import product
from typing import Sequence

import numpy as np

from . import analysis, oracle, pipeline
from .data import DatasetError, load_dataset, write_csv
from .experiment import ExperimentConfig, emit_plot_data, load_toml, pipeline_config_from_mapping, run_experiment
from .graph import GraphError, load_graph
from .learners import LearnerError
from .simulate import gen_paper_model

# errors reported as "error: ..." with exit status 2 rather than a traceback
_USER_ERRORS = (
    OSError,
    ValueError,
    KeyError,
    GraphError,
    DatasetError,
    LearnerError,
    pipeline.PipelineError,
    pipeline.PersistenceError,
    oracle.OracleError,
)


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text: str | None) -> list[float]:
    return [float(t) for t in _names(text)]


def _assignments(items: Sequence[str] | None) -> dict[str, int]:
    out: dict[str, int] = {}
    for item in items or ():
        for part in _names(item):
            name, sep, val = part.partition("=")
            if not sep:
                raise ValueError(f"expected NAME=VALUE, got {part!r}")
            out[name.strip()] = int(val)
    return out


def _print_json(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_build(args) -> int:
    data = load_dataset(args.data)
    cfg = pipeline_config_from_mapping(load_toml(args.config)).resolve(data)
    pipe, trace = pipeline.build(data, cfg)
    pipeline.save_pipeline(pipe, args.out)
    graph = load_graph(args.graph) if args.graph else None
    report = {
        "model": args.out,
        "inventory": pipe.inventory(),
        "preconditions": pipeline.check_preconditions(cfg, graph),
        "diagnostics": pipeline.diagnostics(trace, data, cfg).to_dict(),
    }
    _print_json(report)
    return 0


def cmd_estimate(args) -> int:
    pipe = pipeline.load_pipeline(args.model)
    value = pipeline.estimate(pipe, _floats(args.x), _floats(args.z))
    print(repr(value))
    return 0


def cmd_estimate_batch(args) -> int:
    pipe = pipeline.load_pipeline(args.model)
    requests = load_dataset(args.requests)
    est = pipeline.estimate_batch(pipe, requests)
    cols = [*pipe.config.treatments, *pipe.config.covariates]
    rows = np.column_stack([requests.columns(cols), est]) if len(est) else np.empty((0, len(cols) + 1))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_csv([*cols, "estimate"], rows, fh)
    return 0


def cmd_simulate(args) -> int:
    data = gen_paper_model(args.n, args.seed)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        data.to_csv(fh)
    return 0


def cmd_experiment(args) -> int:
    raw = load_toml(args.config)
    if args.replications is not None:
        raw["replications"] = args.replications
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = ExperimentConfig.from_mapping(raw, os.path.dirname(os.path.abspath(args.config)))
    result = run_experiment(cfg)
    out = args.out or cfg.output_dir or "results"
    csv_path, json_path = emit_plot_data(result, out)
    s = result.summary
    print(f"wrote {csv_path} and {json_path}")
    print(f"mae={s['mae']} max_error={s['max_error']} runtime_s={s['runtime_s']:.2f}")
    if args.check:
        mae = s["median_replication_mae"]
        if mae is None:
            print("check: no theoretical values to compare against", file=sys.stderr)
            return 1
        if mae > cfg.mae_tolerance:
            print(f"check failed: MAE {mae} > {cfg.mae_tolerance}", file=sys.stderr)
            return 1
        print(f"check passed: MAE {mae} <= {cfg.mae_tolerance}")
    return 0


def cmd_check_graph(args) -> int:
    g = load_graph(args.graph)
    x = _names(args.x)
    y = _names(args.y)
    if len(y) != 1:
        raise ValueError("--y takes exactly one outcome node")
    t1 = analysis.check_theorem1_preconditions(g, x, y[0])
    z = _names(args.z) if args.z is not None else sorted(t1.covariates)
    hedge = analysis.find_hedge(g, x, y)
    report = {
        "identifiable": analysis.is_identifiable_conditional(g, x, y, z),
        "available_for_modeling": analysis.is_available_for_modeling(g, x, y, z),
        "theorem1_preconditions": t1.to_dict(),
        "covariates": z,
        "hedge_witness": None if hedge is None else hedge.to_dict(),
    }
    _print_json(report)
    return 0


def cmd_oracle_eval(args) -> int:
    scm = oracle.load_scm(args.scm)
    do = _assignments(args.do)
    given = _assignments(args.given)
    targets = _names(args.targets)
    if given:
        table = oracle.conditional_do_effect(scm, do, targets, given)
    else:
        table = oracle.do_effect(scm, do, targets)
    rows = []
    for idx in product(*(range(c) for c in table.cardinalities)):
        rows.append({"assignment": dict(zip(table.variables, idx)), "p": float(table.probabilities[idx])})
    _print_json({"do": do, "given": given, "variables": list(table.variables), "table": rows})
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ace", description="Average causal effect estimation toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="fit the estimator on a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True, help="TOML with [pipeline] and [learners.*] tables")
    p.add_argument("--out", required=True)
    p.add_argument("--graph", help="optional graph JSON for precondition checks")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("estimate", help="evaluate a saved estimator at one point")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True, help="comma-separated treatment values")
    p.add_argument("--z", default="", help="comma-separated covariate values")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("estimate-batch", help="evaluate a saved estimator on a CSV of requests")
    p.add_argument("--model", required=True)
    p.add_argument("--requests", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_batch)

    p = sub.add_parser("simulate", help="write synthetic data")
    sim = p.add_subparsers(dest="model", required=True)
    q = sim.add_parser("paper", help="Z ~ U(0,1), X = sin Z + U(-.5,.5), Y = XZ + N(0, .05^2)")
    q.add_argument("--n", type=int, default=1000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run an experiment from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config [output].dir or ./results)")
    p.add_argument("--check", action="store_true", help="exit nonzero if MAE exceeds the tolerance")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("check-graph", help="identifiability report for a graph JSON")
    p.add_argument("--graph", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--z", help="covariates (default: every other observed node)")
    p.set_defaults(func=cmd_check_graph)

    p = sub.add_parser("oracle", help="exact queries on a discrete SCM")
    orc = p.add_subparsers(dest="action", required=True)
    q = orc.add_parser("eval", help="P(targets | do(...), given)")
    q.add_argument("--scm", required=True)
    q.add_argument("--do", action="append", default=[], help="NAME=VALUE, repeatable")
    q.add_argument("--targets", required=True)
    q.add_argument("--given", action="append", default=[], help="NAME=VALUE, repeatable")
    q.set_defaults(func=cmd_oracle_eval)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
