"""Utility of synthetic data: marginal TVD, l-infinity query error, SSS categories."""
from __future__ import annotations

import itertools
from enum import Enum
from typing import Sequence

import numpy as np

from .tables import Dataset, SchemaError, tabulate


class SSSOutcome(str, Enum):
    BEST = "Best"
    II_PLUS = "II+"
    I_PLUS = "I+"
    NEUTRAL = "Neutral"
    II_MINUS = "II-"
    I_MINUS = "I-"
    WORST = "Worst"


# (signs match, significant in original, significant in synthetic) -> outcome
SSS_TABLE = {
    (True, True, True): SSSOutcome.BEST,
    (True, False, False): SSSOutcome.BEST,
    (True, True, False): SSSOutcome.II_PLUS,
    (True, False, True): SSSOutcome.I_PLUS,
    (False, False, False): SSSOutcome.NEUTRAL,
    (False, True, False): SSSOutcome.II_MINUS,
    (False, False, True): SSSOutcome.I_MINUS,
    (False, True, True): SSSOutcome.WORST,
}


def classify_sss(sign_match: bool, sig_orig: bool, sig_synth: bool) -> SSSOutcome:
    return SSS_TABLE[bool(sign_match), bool(sig_orig), bool(sig_synth)]


def tvd(p, q) -> float:
    """Total variation distance, half the l1 distance."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def _check_same_schema(original: Dataset, replicates: Sequence[Dataset]) -> None:
    if not replicates:
        raise ValueError("no synthetic replicates given")
    for r in replicates:
        if r.schema != original.schema:
            raise SchemaError("synthetic data schema differs from the original")


def marginal_probs(dataset: Dataset, subset) -> np.ndarray:
    t = tabulate(dataset, subset)
    return t.values / max(dataset.n, 1)


def averaged_probs(replicates: Sequence[Dataset], subset) -> np.ndarray:
    """Cell-wise mean of the replicates' marginal proportions."""
    return np.mean([marginal_probs(r, subset) for r in replicates], axis=0)


def avg_kway_tvd(original: Dataset, replicates: Sequence[Dataset], k: int) -> float:
    """Mean over all k-way marginals of the TVD between the original and the averaged replicates."""
    _check_same_schema(original, replicates)
    names = original.schema.names
    if not 1 <= k <= len(names):
        raise ValueError(f"k={k} outside 1..{len(names)}")
    vals = [tvd(marginal_probs(original, s), averaged_probs(replicates, s))
            for s in itertools.combinations(names, k)]
    return float(np.mean(vals))


def linf_error(queries, original: Dataset, replicates: Sequence[Dataset],
               scale: str = "proportion") -> float:
    """Largest absolute cell error over all query tables.

    ``scale="counts"`` reports the error in counts of the original sample size.
    """
    _check_same_schema(original, replicates)
    if scale not in ("proportion", "counts"):
        raise ValueError(f"unknown scale {scale!r}")
    worst = 0.0
    for q in queries:
        err = np.abs(marginal_probs(original, q) - averaged_probs(replicates, q)).max()
        worst = max(worst, float(err))
    return worst * original.n if scale == "counts" else worst
