"""Reference synthesizers: full-table Laplace sanitization and MWEM."""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import JointDistribution, correct_and_normalize, to_probabilities
from .privacy import (MWEM_MEASURE, MWEM_SELECT, BudgetLedger, PrivacySpec, as_fraction,
                      exponential_select, laplace_noise, sanitize_queries, substream)
from .tables import Dataset, SchemaError, decode, encode, tabulate

log = logging.getLogger(__name__)

# Refuse full-domain methods beyond this many cells unless forced.
DEFAULT_MAX_CELLS = 1_000_000


class DomainTooLarge(SchemaError):
    pass


def check_domain(dataset: Dataset, max_cells: int | None) -> None:
    size = dataset.schema.size()
    if max_cells is not None and size > max_cells:
        raise DomainTooLarge(f"full domain has {size:,} cells (limit {max_cells:,}); "
                             f"use --force to override")


def full_table_sanitize(dataset: Dataset, spec: PrivacySpec, replicate: int = 0,
                        ledger: BudgetLedger | None = None, counter: Counter | None = None,
                        max_cells: int | None = DEFAULT_MAX_CELLS) -> JointDistribution:
    """Laplace-sanitize the full cross-tabulation and turn it into a distribution.

    Uses the same noise substream as query 0 of the reconstruction path, so it
    matches reconstruction from the single full table draw for draw.
    """
    check_domain(dataset, max_cells)
    (table,) = sanitize_queries(dataset, [dataset.schema.names], spec, replicate, ledger).values()
    return correct_and_normalize(to_probabilities(table, counter), counter)


@dataclass
class MWEMState:
    weights: np.ndarray
    t: int = 0
    selected: list[int] = field(default_factory=list)
    measured: list[float] = field(default_factory=list)


class _CellQueries:
    """Every cell of every query table as a counting query over the full domain."""

    def __init__(self, schema, queries):
        full_levels = decode(np.arange(schema.size()), schema.cards)
        self.maps, self.sizes, self.tables = [], [], []
        for q in queries:
            q = schema.canonical(q)
            cols = [schema.index(n) for n in q]
            self.maps.append(encode(full_levels[:, cols], schema.cards_of(q)))
            self.sizes.append(schema.size(q))
            self.tables.append(q)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])

    def answer(self, weights: np.ndarray) -> np.ndarray:
        return np.concatenate([np.bincount(m, weights=weights, minlength=s)
                               for m, s in zip(self.maps, self.sizes)])

    def indicator(self, k: int) -> np.ndarray:
        t = int(np.searchsorted(self.offsets, k, side="right") - 1)
        return (self.maps[t] == k - self.offsets[t]).astype(float)

    def __len__(self):
        return int(self.offsets[-1])


def mwem(dataset: Dataset, queries, epsilon_replicate, T: int, *, seed: int = 0,
         replicate: int = 0, sensitivity: int = 1, initial: JointDistribution | None = None,
         average: bool = False, noiseless: bool = False, ledger: BudgetLedger | None = None,
         trace: list | None = None, max_cells: int | None = DEFAULT_MAX_CELLS) -> JointDistribution:
    """Multiplicative weights with exponential-mechanism query selection.

    Each of the T rounds spends epsilon_replicate / (2T) selecting the worst
    answered cell query and the same again measuring it.  ``noiseless``
    replaces both mechanisms by argmax and the exact answer (testing only;
    nothing is charged).  ``trace`` receives a copy of the weight vector
    after every round.
    """
    if T <= 0:
        raise ValueError("MWEM needs T >= 1 iterations")
    check_domain(dataset, max_cells)
    schema = dataset.schema
    n = dataset.n
    if n <= 0:
        raise ValueError("MWEM needs a nonempty dataset")
    cq = _CellQueries(schema, queries)
    truth = np.concatenate([tabulate(dataset, q).values for q in cq.tables]).astype(float)

    if initial is None:
        logw = np.zeros(schema.size())
    else:
        if tuple(initial.subset) != schema.names:
            raise SchemaError("initial distribution must cover the full schema")
        if np.any(initial.probs <= 0):
            raise ValueError("initial distribution must be strictly positive")
        logw = np.log(initial.probs)
    state = MWEMState(weights=_scaled(logw, n))

    eps_rep = as_fraction(epsilon_replicate)
    eps_step = eps_rep / (2 * T)
    select_rng = substream(seed, replicate, MWEM_SELECT)
    measure_rng = substream(seed, replicate, MWEM_MEASURE)
    running = np.zeros_like(state.weights)
    for t in range(1, T + 1):
        est = cq.answer(state.weights)
        scores = np.abs(est - truth)
        if noiseless:
            k = int(np.argmax(scores))
            measured = truth[k]
        else:
            k = exponential_select(scores, float(eps_step), sensitivity, select_rng)
            measured = truth[k] + float(laplace_noise(float(sensitivity / eps_step), 1, measure_rng)[0])
            if ledger is not None:
                ledger.charge(f"replicate {replicate}: mwem select t={t}", eps_step)
                ledger.charge(f"replicate {replicate}: mwem measure t={t}", eps_step)
        logw = logw + cq.indicator(k) * (measured - est[k]) / (2.0 * n)
        logw -= logw.max()
        state.weights = _scaled(logw, n)
        state.t = t
        state.selected.append(k)
        state.measured.append(measured)
        running += state.weights
        if trace is not None:
            trace.append(state.weights.copy())

    final = running / T if average else state.weights
    return JointDistribution(schema.names, schema.cards, final / final.sum(), normalized=True)


def _scaled(logw: np.ndarray, n: int) -> np.ndarray:
    w = np.exp(logw - logw.max())
    return w * (n / w.sum())


def default_mwem_iterations(n: int, epsilon: float) -> int:
    """Iteration counts tuned for the simulation grid (n in {200, 500})."""
    grid = [math.exp(-2), math.exp(-1), 1.0, math.e, math.exp(2)]
    table = {200: (5, 15, 25, 60, 120), 500: (10, 25, 50, 100, 200)}
    if n not in table:
        raise ValueError(f"no default MWEM iteration count for n={n}; pass T explicitly")
    for i, e in enumerate(grid):
        if math.isclose(float(epsilon), e, rel_tol=1e-9):
            return table[n][i]
    raise ValueError(f"no default MWEM iteration count for epsilon={epsilon}; pass T explicitly")
