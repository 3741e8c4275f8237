"""Laplace and exponential mechanisms, noise scales and budget accounting."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .tables import ContingencyTable, tabulate

ADD_REMOVE = "add_remove"
REPLACE = "replace"
SENSITIVITY = {ADD_REMOVE: 1, REPLACE: 2}

# Substream purpose tags; a stream key is (seed, replicate, purpose, *extra).
SANITIZE, PIVOT, SAMPLE, MWEM_SELECT, MWEM_MEASURE = range(5)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *key)``.

    Streams for distinct keys never overlap, so replicates and queries can be
    processed in any order or in parallel without changing any draw.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_fraction(eps) -> Fraction | float:
    """Exact rational form of a budget; non-finite values stay float."""
    if isinstance(eps, Fraction):
        return eps
    if isinstance(eps, float) and not math.isfinite(eps):
        return eps
    return Fraction(eps)


@dataclass(frozen=True)
class PrivacySpec:
    epsilon_total: float | Fraction
    m: int = 1
    neighbor_model: str = ADD_REMOVE
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon_total > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon_total}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if self.neighbor_model not in SENSITIVITY:
            raise ValueError(f"neighbor model must be one of {sorted(SENSITIVITY)}")

    @property
    def sensitivity(self) -> int:
        return SENSITIVITY[self.neighbor_model]

    @property
    def noiseless(self) -> bool:
        """Infinite epsilon turns every mechanism into the identity (testing hook)."""
        return self.epsilon_total == math.inf

    @property
    def epsilon_exact(self):
        return as_fraction(self.epsilon_total)

    def per_replicate(self):
        return self.epsilon_exact / self.m


def laplace_scale(spec: PrivacySpec, num_queries: int) -> float:
    """Per-query Laplace scale when ``num_queries`` tables share one replicate's budget.

    Each query gets epsilon / (m * num_queries), so the scale is
    sensitivity * m * num_queries / epsilon.
    """
    if num_queries < 1:
        raise ValueError("num_queries must be >= 1")
    if spec.noiseless:
        return 0.0
    return float(Fraction(spec.sensitivity * spec.m * num_queries) / spec.epsilon_exact)


def laplace_noise(scale: float, size, rng: np.random.Generator) -> np.ndarray:
    """Laplace(0, scale) draws by inverting the CDF of one uniform per draw."""
    u = rng.random(size) - 0.5
    mag = np.minimum(2.0 * np.abs(u), 1.0 - 2.0**-53)
    return -scale * np.sign(u) * np.log1p(-mag)


def laplace_sanitize(table: ContingencyTable, scale: float,
                     rng: np.random.Generator) -> ContingencyTable:
    """Add independent Laplace noise to every cell, empty cells included.

    ``scale == 0`` returns the counts unchanged (still flagged sanitized).
    """
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    values = table.values.astype(float)
    if scale > 0:
        values = values + laplace_noise(scale, values.shape, rng)
    return table.replace(values, sanitized=True)


def exponential_probabilities(scores: Sequence[float], epsilon_step: float,
                              delta_u: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no candidates to select from")
    if delta_u <= 0:
        raise ValueError("delta_u must be positive")
    logits = scores * (epsilon_step / (2.0 * delta_u))
    w = np.exp(logits - logits.max())
    return w / w.sum()


def exponential_select(scores: Sequence[float], epsilon_step: float, delta_u: float,
                       rng: np.random.Generator) -> int:
    """Index k drawn with probability proportional to exp(eps * score_k / (2 * delta_u))."""
    probs = exponential_probabilities(scores, epsilon_step, delta_u)
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(k, len(probs) - 1)


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    epsilon: Fraction | float
    group: str | None = None  # entries sharing a group compose in parallel


@dataclass
class BudgetLedger:
    """Append-only record of privacy spending.

    Sequential entries add up; entries of one parallel group contribute
    their maximum.  Totals are exact rationals when every entry is finite.
    """

    entries: list[LedgerEntry] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge(self, label: str, epsilon, group: str | None = None) -> LedgerEntry:
        eps = as_fraction(epsilon)
        if not eps > 0:
            raise ValueError(f"ledger entry {label!r} must spend a positive budget")
        entry = LedgerEntry(label, eps, group)
        with self._lock:
            self.entries.append(entry)
        return entry

    def extend(self, entries) -> None:
        with self._lock:
            self.entries.extend(entries)

    def total(self):
        return ledger_total(self)

    def to_json(self) -> dict:
        total = self.total()
        return {
            "total": str(total),
            "total_float": float(total),
            "entries": [{"label": e.label, "epsilon": str(e.epsilon), "group": e.group}
                        for e in self.entries],
        }


def ledger_total(ledger: BudgetLedger):
    seq = Fraction(0)
    groups: dict[str, Fraction | float] = {}
    for e in ledger.entries:
        if e.group is None:
            seq = seq + e.epsilon
        else:
            groups[e.group] = max(groups.get(e.group, 0), e.epsilon)
    return sum(groups.values(), seq)


def sanitize_queries(dataset, queries, spec: PrivacySpec, replicate: int = 0,
                     ledger: BudgetLedger | None = None) -> dict:
    """Tabulate and sanitize every query table for one replicate.

    Each of the |Q| tables gets epsilon / (m |Q|); query k draws its noise
    from the substream (seed, replicate, SANITIZE, k).
    """
    queries = list(queries)
    scale = laplace_scale(spec, len(queries))
    eps_q = spec.per_replicate() / len(queries)
    out = {}
    for k, q in enumerate(queries):
        table = tabulate(dataset, q)
        out[table.subset] = laplace_sanitize(table, scale, substream(spec.seed, replicate, SANITIZE, k))
        if ledger is not None:
            ledger.charge(f"replicate {replicate}: laplace {'x'.join(table.subset)}", eps_q)
    return out
