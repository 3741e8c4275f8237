"""Command-line entry point: ``cipher {synthesize,evaluate,experiment1,cellcount}``.

Every option can also come from a JSON ``--config`` file whose keys are the
option names with dashes replaced by underscores; explicit flags win.
Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import io
from .baselines import DEFAULT_MAX_CELLS, DomainTooLarge
from .core import DEFAULT_LAMBDA, PIVOT_POLICIES, ReconstructionError
from .experiment import DEFAULT_EPSILONS, DEFAULT_NS, Experiment1Config, run_experiment1
from .inference import sss_report
from .metrics import avg_kway_tvd, linf_error
from .privacy import ADD_REMOVE, REPLACE, PrivacySpec
from .synth import METHODS, SynthesisParams, generate_replicates
from .tables import AttributeSchema, QuerySet, SchemaError, cell_count

log = logging.getLogger("cipherdp")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


class UsageError(ValueError):
    pass


def parse_epsilon(text) -> float | Fraction:
    """Accept decimals, fractions ("1/3"), "e", "e^k"/"exp(k)" and "inf"."""
    if isinstance(text, (int, float, Fraction)):
        return text
    s = str(text).strip().lower().replace(" ", "")
    if s in ("inf", "infinity"):
        return math.inf
    m = re.fullmatch(r"(?:e\^|exp\()?(-?[0-9.]+)\)?", s)
    if s == "e":
        return math.e
    if m and (s.startswith("e^") or s.startswith("exp(")):
        return math.exp(float(m.group(1)))
    try:
        return Fraction(s) if "/" in s else float(s)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"cannot parse epsilon {text!r}") from None


def _csv_list(text, conv=str):
    if isinstance(text, (list, tuple)):
        return [conv(t) for t in text]
    return [conv(t) for t in str(text).split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cipher", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def add_privacy(sp):
        sp.add_argument("--epsilon", default=S, help="total privacy budget (e.g. 1, 1/2, e^2)")
        sp.add_argument("--m", type=int, default=S, help="number of synthetic replicates")
        sp.add_argument("--neighbor", choices=["add-remove", "replace"], default=S)
        sp.add_argument("--seed", type=int, default=S)

    s = sub.add_parser("synthesize", help="generate private synthetic replicates")
    s.add_argument("--config", default=S)
    s.add_argument("--data", default=S, help="original microdata CSV (0-based codes)")
    s.add_argument("--schema", default=S, help="schema JSON")
    s.add_argument("--queries", default=S, help="query set JSON (list of attribute lists)")
    s.add_argument("--method", choices=METHODS, default=S)
    add_privacy(s)
    s.add_argument("--lambda", dest="lam", type=float, default=S)
    s.add_argument("--pivot-policy", choices=PIVOT_POLICIES, default=S)
    s.add_argument("--mwem-iters", type=int, default=S)
    s.add_argument("--mwem-average", action="store_true", default=S)
    s.add_argument("--synthetic-n", type=int, default=S)
    s.add_argument("--force", action="store_true", default=S,
                   help="allow full-domain methods on very large domains")
    s.add_argument("--jobs", type=int, default=S)
    s.add_argument("--out", default=S, help="output directory")

    e = sub.add_parser("evaluate", help="utility metrics of synthetic replicates")
    e.add_argument("--config", default=S)
    e.add_argument("--original", default=S)
    e.add_argument("--synthetic", nargs="+", default=S)
    e.add_argument("--schema", default=S)
    e.add_argument("--queries", default=S)
    e.add_argument("--metrics", default=S, help="comma list of tvd,linf,sss")
    e.add_argument("--k", default=S, help="comma list of marginal orders for TVD")
    e.add_argument("--sss", action="store_true", default=S, help="shorthand for adding sss")
    e.add_argument("--outcome", default=S)
    e.add_argument("--covariates", default=S)
    e.add_argument("--alpha", type=float, default=S)
    e.add_argument("--linf-scale", choices=["proportion", "counts"], default=S)
    e.add_argument("--out", default=S)

    x = sub.add_parser("experiment1", help="simulation grid on the four-variable design")
    x.add_argument("--config", default=S)
    x.add_argument("--n", default=S, help="comma list of sample sizes")
    x.add_argument("--epsilons", default=S, help="comma list of budgets")
    x.add_argument("--methods", default=S)
    x.add_argument("--query-sets", default=S, help="comma list of 2way,3way")
    x.add_argument("--reps", type=int, default=S)
    x.add_argument("--m", type=int, default=S)
    x.add_argument("--seed", type=int, default=S)
    x.add_argument("--lambda", dest="lam", type=float, default=S)
    x.add_argument("--pivot-policy", choices=PIVOT_POLICIES, default=S)
    x.add_argument("--mwem-iters", type=int, default=S)
    x.add_argument("--no-sss", action="store_true", default=S)
    x.add_argument("--alpha", type=float, default=S)
    x.add_argument("--jobs", type=int, default=S)
    x.add_argument("--out", default=S)

    c = sub.add_parser("cellcount", help="number of stored cells for a set of tables")
    c.add_argument("--config", default=S)
    c.add_argument("--schema", default=S)
    c.add_argument("--p", type=int, default=S, help="number of attributes (with --K)")
    c.add_argument("--K", default=S, help="one cardinality for all, or a comma list")
    c.add_argument("--tables", default=S,
                   help='comma list of "full", k (all k-way), or a query JSON path')
    return p


SYNTH_DEFAULTS = dict(method="cipher", epsilon="1", m=1, neighbor="add-remove", seed=0,
                      lam=DEFAULT_LAMBDA, pivot_policy="random", mwem_iters=None,
                      mwem_average=False, synthetic_n=None, force=False, jobs=1,
                      queries=None, out="synthetic")
EVAL_DEFAULTS = dict(queries=None, metrics="tvd,linf", k=None, sss=False, outcome=None,
                     covariates=None, alpha=0.05, linf_scale="proportion", out=None)
EXP_DEFAULTS = dict(n=None, epsilons=None, methods="cipher,mwem,full", query_sets="2way",
                    reps=10, m=5, seed=0, lam=DEFAULT_LAMBDA, pivot_policy="random",
                    mwem_iters=None, no_sss=False, alpha=0.05, jobs=1, out=None)
CELL_DEFAULTS = dict(schema=None, p=None, K=None, tables="full")


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < command-line flags."""
    opts = dict(defaults)
    given = vars(args)
    if "config" in given:
        with open(given["config"]) as fh:
            conf = json.load(fh)
        if not isinstance(conf, dict):
            raise UsageError("config file must hold a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in conf.items()})
    opts.update({k: v for k, v in given.items() if k not in ("config", "command", "verbose")})
    return opts


def _require(opts, *keys):
    missing = [k for k in keys if opts.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-")
                                                                    for k in missing))


def cmd_synthesize(opts: dict) -> dict:
    _require(opts, "data", "schema")
    schema = io.load_schema(opts["schema"])
    data = io.read_csv(opts["data"], schema)
    if opts["queries"]:
        queries = io.load_queries(opts["queries"], schema)
    elif opts["method"] == "full":
        queries = QuerySet((schema.names,))
    else:
        raise UsageError(f"--queries is required for --method {opts['method']}")
    spec = PrivacySpec(parse_epsilon(opts["epsilon"]), int(opts["m"]),
                       REPLACE if opts["neighbor"] == "replace" else ADD_REMOVE, int(opts["seed"]))
    params = SynthesisParams(method=opts["method"], lam=float(opts["lam"]),
                             pivot_policy=opts["pivot_policy"], mwem_iters=opts["mwem_iters"],
                             mwem_average=bool(opts["mwem_average"]),
                             synthetic_n=opts["synthetic_n"],
                             max_cells=None if opts["force"] else DEFAULT_MAX_CELLS,
                             jobs=int(opts["jobs"]))
    reps, report = generate_replicates(data, queries, spec, params)
    out = Path(opts["out"])
    files = []
    for l, ds in enumerate(reps, start=1):
        path = out / f"synthetic_{l}.csv"
        io.write_csv(ds, path)
        files.append(path.name)
    report["files"] = files
    report["config"] = {k: v for k, v in sorted(opts.items()) if k not in ("jobs", "out")}
    io.write_json(report, out / "report.json")
    return {"out": str(out), "files": files, "epsilon_spent": report["ledger"]["total"]}


def cmd_evaluate(opts: dict) -> dict:
    _require(opts, "original", "synthetic", "schema")
    schema = io.load_schema(opts["schema"])
    original = io.read_csv(opts["original"], schema)
    reps = [io.read_csv(path, schema) for path in _csv_list(opts["synthetic"])]
    metrics = set(_csv_list(opts["metrics"]))
    if opts["sss"]:
        metrics.add("sss")
    unknown = metrics - {"tvd", "linf", "sss"}
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}")
    result: dict = {"m": len(reps), "n_original": original.n}
    if "tvd" in metrics:
        ks = _csv_list(opts["k"], int) if opts["k"] else list(range(1, schema.p + 1))
        result["tvd"] = {str(k): avg_kway_tvd(original, reps, k) for k in ks}
    if "linf" in metrics:
        if opts["queries"]:
            qs = io.load_queries(opts["queries"], schema)
        else:
            qs = QuerySet.all_kway(schema, min(2, schema.p))
        result["linf"] = {"scale": opts["linf_scale"], "queries": [list(q) for q in qs],
                          "value": linf_error(qs, original, reps, opts["linf_scale"])}
    if "sss" in metrics:
        _require(opts, "outcome")
        covs = (_csv_list(opts["covariates"]) if opts["covariates"]
                else [n for n in schema.names if n != opts["outcome"]])
        result["sss"] = sss_report(original, reps, opts["outcome"], covs, float(opts["alpha"]))
    if opts["out"]:
        io.write_json(result, opts["out"])
    return result


def cmd_experiment1(opts: dict) -> dict:
    cfg = Experiment1Config(
        ns=tuple(_csv_list(opts["n"], int)) if opts["n"] else DEFAULT_NS,
        epsilons=tuple(float(parse_epsilon(e)) for e in _csv_list(opts["epsilons"]))
        if opts["epsilons"] else DEFAULT_EPSILONS,
        methods=tuple(_csv_list(opts["methods"])),
        query_sets=tuple(_csv_list(opts["query_sets"])),
        reps=int(opts["reps"]), m=int(opts["m"]), seed=int(opts["seed"]), lam=float(opts["lam"]),
        pivot_policy=opts["pivot_policy"], mwem_iters=opts["mwem_iters"],
        sss=not opts["no_sss"], alpha=float(opts["alpha"]), jobs=int(opts["jobs"]))
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}")
    result = run_experiment1(cfg)
    if opts["out"]:
        io.write_json(result, opts["out"])
    return result


def cmd_cellcount(opts: dict) -> dict:
    if opts["schema"]:
        schema = io.load_schema(opts["schema"])
    else:
        _require(opts, "p", "K")
        ks = _csv_list(opts["K"], int)
        p = int(opts["p"])
        if len(ks) == 1:
            ks = ks * p
        if len(ks) != p:
            raise UsageError(f"--K lists {len(ks)} cardinalities for p={p}")
        schema = AttributeSchema.from_cardinalities([(f"V{i + 1}", k) for i, k in enumerate(ks)])
    counts = {}
    for spec in _csv_list(opts["tables"]):
        if spec == "full":
            counts[spec] = cell_count(schema, "full")
        elif spec.isdigit():
            counts[f"all {spec}-way"] = cell_count(schema, int(spec))
        else:
            counts[spec] = cell_count(schema, io.load_queries(spec, schema))
    return {"attributes": list(schema.names), "cardinalities": list(schema.cards), "cells": counts}


COMMANDS = {
    "synthesize": (cmd_synthesize, SYNTH_DEFAULTS),
    "evaluate": (cmd_evaluate, EVAL_DEFAULTS),
    "experiment1": (cmd_experiment1, EXP_DEFAULTS),
    "cellcount": (cmd_cellcount, CELL_DEFAULTS),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, defaults = COMMANDS[args.command]
    try:
        result = func(resolve(args, defaults))
    except (ReconstructionError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"cipher {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DomainTooLarge, SchemaError, UsageError, ValueError, OSError) as exc:
        print(f"cipher {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(io.dumps(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
