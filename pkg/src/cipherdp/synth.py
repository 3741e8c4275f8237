"""Sampling microdata from joint distributions and the m-replicate pipeline."""
from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import DEFAULT_MAX_CELLS, check_domain, full_table_sanitize, mwem
from .core import DEFAULT_LAMBDA, JointDistribution, ReconstructionReport, reconstruct_full
from .privacy import SAMPLE, BudgetLedger, PrivacySpec, sanitize_queries, substream
from .tables import Dataset, QuerySet, decode

log = logging.getLogger(__name__)

METHODS = ("cipher", "mwem", "full")


def sample_dataset(joint: JointDistribution, n: int, rng: np.random.Generator, schema) -> Dataset:
    """n i.i.d. records from a normalized joint over all of ``schema``."""
    if n <= 0:
        raise ValueError("sample size must be positive")
    if not joint.normalized:
        raise ValueError("joint must be normalized before sampling")
    if tuple(joint.subset) != schema.names:
        raise ValueError("joint does not cover the schema in schema order")
    cdf = np.cumsum(joint.probs)
    cells = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    cells = np.minimum(cells, len(cdf) - 1)
    return Dataset(schema, decode(cells, schema.cards))


@dataclass(frozen=True)
class SynthesisParams:
    method: str = "cipher"
    lam: float = DEFAULT_LAMBDA
    pivot_policy: str = "random"
    mwem_iters: int | None = None
    mwem_average: bool = False
    synthetic_n: int | None = None
    max_cells: int | None = DEFAULT_MAX_CELLS
    jobs: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "mwem" and not self.mwem_iters:
            raise ValueError("MWEM needs an iteration count")


def synthesize_joint(dataset: Dataset, queryset: QuerySet, spec: PrivacySpec,
                     params: SynthesisParams, replicate: int, ledger: BudgetLedger,
                     diag: dict) -> JointDistribution:
    """The private joint distribution for one replicate under ``params.method``."""
    warnings: Counter = Counter()
    if params.method == "cipher":
        sanitized = sanitize_queries(dataset, queryset, spec, replicate, ledger)
        rep = ReconstructionReport(lam=params.lam, warnings=warnings)
        joint = reconstruct_full(sanitized, dataset.schema, params.lam, seed=spec.seed,
                                 replicate=replicate, pivot_policy=params.pivot_policy, report=rep)
        diag["reconstruction"] = rep.to_json()
    elif params.method == "full":
        joint = full_table_sanitize(dataset, spec, replicate, ledger, warnings, params.max_cells)
    else:
        # the noiseless run ignores epsilon; any positive value keeps mwem's checks happy
        eps = 1.0 if spec.noiseless else spec.per_replicate()
        joint = mwem(dataset, queryset, eps, params.mwem_iters, seed=spec.seed,
                     replicate=replicate, sensitivity=spec.sensitivity,
                     average=params.mwem_average, noiseless=spec.noiseless,
                     ledger=None if spec.noiseless else ledger, max_cells=params.max_cells)
        if spec.noiseless:
            # no guarantee at all; record it the way the Laplace-based methods do
            ledger.charge(f"replicate {replicate}: mwem (noiseless)", math.inf)
        diag["mwem_iters"] = params.mwem_iters
    diag["warnings"] = dict(sorted(warnings.items()))
    return joint


def _one_replicate(dataset, queryset, spec, params, replicate):
    ledger = BudgetLedger()
    diag = {"replicate": replicate}
    joint = synthesize_joint(dataset, queryset, spec, params, replicate, ledger, diag)
    n = params.synthetic_n or dataset.n
    synthetic = sample_dataset(joint, n, substream(spec.seed, replicate, SAMPLE), dataset.schema)
    diag["epsilon_spent"] = str(ledger.total())
    return synthetic, ledger.entries, diag


def generate_replicates(dataset: Dataset, queryset: QuerySet, spec: PrivacySpec,
                        params: SynthesisParams) -> tuple[list[Dataset], dict]:
    """m synthetic datasets, each from a fresh private joint at budget epsilon / m.

    Replicates draw only from their own substreams, so the output does not
    depend on ``params.jobs``.  The ledger is assembled in replicate order.
    """
    queryset.validate(dataset.schema)
    if params.method in ("full", "mwem"):
        check_domain(dataset, params.max_cells)

    def run(l):
        return _one_replicate(dataset, queryset, spec, params, l)

    if params.jobs > 1 and spec.m > 1:
        with ThreadPoolExecutor(max_workers=params.jobs) as pool:
            results = list(pool.map(run, range(spec.m)))
    else:
        results = [run(l) for l in range(spec.m)]

    ledger = BudgetLedger()
    for _, entries, _ in results:
        ledger.extend(entries)
    report = {
        "method": params.method,
        "params": {k: v for k, v in asdict(params).items() if k != "jobs"},
        "privacy": {"epsilon": str(spec.epsilon_total), "m": spec.m,
                    "neighbor_model": spec.neighbor_model, "seed": spec.seed},
        "queries": [list(q) for q in queryset],
        "n_original": dataset.n,
        "ledger": ledger.to_json(),
        "replicates": [d for _, _, d in results],
    }
    return [s for s, _, _ in results], report
