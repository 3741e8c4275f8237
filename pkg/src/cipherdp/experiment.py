"""Simulation grid: DGP data, private synthesis, utility summaries."""
from __future__ import annotations

import itertools
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import default_mwem_iterations
from .core import DEFAULT_LAMBDA
from .inference import dgp_simulate, sss_report
from .metrics import SSSOutcome, avg_kway_tvd, linf_error
from .privacy import PrivacySpec, substream
from .synth import METHODS, SynthesisParams, generate_replicates
from .tables import QuerySet

log = logging.getLogger(__name__)

DEFAULT_EPSILONS = tuple(math.exp(k) for k in (-2, -1, 0, 1, 2))
DEFAULT_NS = (200, 500)
QUERY_SETS = {"2way": 2, "3way": 3}
DATA_KEY, RUN_KEY = 101, 102


@dataclass
class Experiment1Config:
    ns: tuple[int, ...] = DEFAULT_NS
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    methods: tuple[str, ...] = ("cipher", "mwem", "full")
    query_sets: tuple[str, ...] = ("2way",)
    reps: int = 10
    m: int = 5
    seed: int = 0
    lam: float = DEFAULT_LAMBDA
    pivot_policy: str = "random"
    mwem_iters: int | None = None
    tvd_k: tuple[int, ...] = (1, 2, 3)
    sss: bool = True
    alpha: float = 0.05
    outcome: str = "V4"
    covariates: tuple[str, ...] = ("V1", "V2", "V3")
    jobs: int = 1

    def cells(self):
        """(n, epsilon, method, query set) combinations; full-table runs ignore the query set."""
        out = []
        for n, eps, method in itertools.product(self.ns, self.epsilons, self.methods):
            qsets = ("full",) if method == "full" else self.query_sets
            out.extend((n, eps, method, q) for q in qsets)
        return out


def _cell_seed(seed: int, cell, rep: int) -> int:
    """Seed for one (cell, repetition); depends only on the cell itself, not the grid."""
    n, eps, method, qname = cell
    eps_bits = int(np.float64(eps).view(np.int64))
    key = (n, eps_bits, METHODS.index(method), (*QUERY_SETS, "full").index(qname), rep)
    return int(substream(seed, RUN_KEY, *key).integers(0, 2**63))


def _run_one(cfg: Experiment1Config, cell, rep: int) -> dict:
    n, eps, method, qname = cell
    original = dgp_simulate(n, substream(cfg.seed, DATA_KEY, n, rep))
    schema = original.schema
    k = schema.p if qname == "full" else QUERY_SETS[qname]
    queryset = QuerySet.all_kway(schema, k)
    T = None
    if method == "mwem":
        T = cfg.mwem_iters or default_mwem_iterations(n, eps)
    spec = PrivacySpec(eps, cfg.m, seed=_cell_seed(cfg.seed, cell, rep))
    params = SynthesisParams(method=method, lam=cfg.lam, pivot_policy=cfg.pivot_policy,
                             mwem_iters=T)
    reps, report = generate_replicates(original, queryset, spec, params)
    row = {f"tvd{k}": avg_kway_tvd(original, reps, k) for k in cfg.tvd_k}
    for qs in cfg.query_sets:
        row[f"linf_{qs}"] = linf_error(QuerySet.all_kway(schema, QUERY_SETS[qs]), original, reps)
    row["epsilon_spent"] = report["ledger"]["total"]
    if cfg.sss:
        try:
            sss = sss_report(original, reps, cfg.outcome, cfg.covariates, cfg.alpha)
            row["sss"] = sss["counts"]
            row["dropped"] = len(sss["dropped_replicates"])
        except ValueError as exc:
            row["sss"] = None
            row["sss_error"] = str(exc)
    return row


def _summarize(rows: list[dict]) -> dict:
    out = {}
    metrics = [k for k in rows[0] if k.startswith(("tvd", "linf"))]
    for key in metrics:
        vals = np.array([r[key] for r in rows], dtype=float)
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[key] = {"mean": float(vals.mean()), "sd": sd, "se": sd / math.sqrt(len(vals))}
    sss_rows = [r["sss"] for r in rows if r.get("sss")]
    if sss_rows:
        tot = Counter()
        for s in sss_rows:
            tot.update(s)
        denom = sum(tot.values())
        out["sss"] = {o.value: tot[o.value] / denom for o in SSSOutcome}
    out["sss_failed_reps"] = sum(1 for r in rows if "sss" in r and r["sss"] is None)
    out["epsilon_spent"] = sorted({r["epsilon_spent"] for r in rows})
    return out


def run_experiment1(cfg: Experiment1Config) -> dict:
    """Run every grid cell for ``cfg.reps`` repetitions and summarize each cell."""
    cells = cfg.cells()
    tasks = [(cfg, c, r) for c in cells for r in range(cfg.reps)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))))
    else:
        rows = [_run_task(t) for t in tasks]

    results = []
    for i, (n, eps, method, qname) in enumerate(cells):
        cell_rows = rows[i * cfg.reps:(i + 1) * cfg.reps]
        results.append({"n": n, "epsilon": eps, "method": method, "queries": qname,
                        "mwem_iters": (cfg.mwem_iters or default_mwem_iterations(n, eps))
                        if method == "mwem" else None,
                        "summary": _summarize(cell_rows)})
    conf = asdict(cfg)
    conf.pop("jobs")
    return {"config": conf, "cells": results}


def _run_task(task):
    return _run_one(*task)
