"""Stepwise reconstruction of a full joint distribution from low-dimensional tables.

A j-way joint over S is obtained from the (j-1)-way joints of its subsets: pick
a pivot X in S, write every Pr(X | S minus {X, Y}) as a mixture of the unknown
conditionals Pr(X | S minus X) weighted by Pr(Y | S minus {X, Y}), solve the
resulting linear system with a ridge penalty, and multiply the solved
conditional by the (j-1)-way joint of S minus X.
"""
from __future__ import annotations

import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .privacy import PIVOT, substream
from .tables import (PROBABILITIES, AttributeSchema, ContingencyTable, SchemaError,
                     conditional, decode, encode, marginalize)

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-4
# Largest dense block (rows * cols) the solver will factorize.
MAX_BLOCK_ENTRIES = 25_000_000

PIVOT_POLICIES = ("random", "first-attribute", "last-attribute")


class ReconstructionError(RuntimeError):
    """Internal inconsistency or an infeasible system during reconstruction."""


@dataclass(frozen=True)
class JointDistribution(ContingencyTable):
    kind: str = PROBABILITIES
    normalized: bool = False

    def __post_init__(self):
        super().__post_init__()
        if self.normalized and not self.is_normalized():
            raise ValueError(f"joint over {self.subset} is flagged normalized but is not")

    @property
    def probs(self) -> np.ndarray:
        return self.values


@dataclass
class BlockLinearSystem:
    """Equations Pr(pivot=r | G) = sum_y Pr(pivot=r | G, Y=y) Pr(Y=y | G).

    There is one block per pivot level r < K_pivot - 1; all blocks share the
    same coefficient matrix.  Rows are grouped by the dropped co-attribute Y
    (schema order) and then by the cell of G; unknowns within a block follow
    the cells of ``rest`` (the subset without the pivot).
    """

    subset: tuple[str, ...]
    cards: tuple[int, ...]
    pivot: str
    blocks: list[tuple[np.ndarray, np.ndarray]]
    row_index: list[tuple[str, int]]

    @property
    def rest(self) -> tuple[str, ...]:
        return tuple(n for n in self.subset if n != self.pivot)

    @property
    def rest_cards(self) -> tuple[int, ...]:
        return tuple(k for n, k in zip(self.subset, self.cards) if n != self.pivot)

    @property
    def pivot_card(self) -> int:
        return self.cards[self.subset.index(self.pivot)]

    @property
    def unknown_index(self) -> list[tuple[int, int]]:
        """(pivot level, rest cell) for each position of the stacked unknown vector."""
        n_rest = math.prod(self.rest_cards)
        return [(r, c) for r in range(len(self.blocks)) for c in range(n_rest)]

    @property
    def n_equations(self) -> int:
        return sum(len(b) for _, b in self.blocks)

    @property
    def n_unknowns(self) -> int:
        return sum(A.shape[1] for A, _ in self.blocks)

    def assembled(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense block-diagonal matrix and stacked right-hand side."""
        A = np.zeros((self.n_equations, self.n_unknowns))
        i = j = 0
        for blk, _ in self.blocks:
            A[i:i + blk.shape[0], j:j + blk.shape[1]] = blk
            i += blk.shape[0]
            j += blk.shape[1]
        return A, np.concatenate([b for _, b in self.blocks])


@dataclass
class ConditionalSolution:
    """Solved Pr(pivot = r | rest) for r < K_pivot - 1, stacked level-major."""

    z: np.ndarray
    lambda_used: float
    residual_norm: float
    subset: tuple[str, ...]
    cards: tuple[int, ...]
    pivot: str

    @property
    def rest(self) -> tuple[str, ...]:
        return tuple(n for n in self.subset if n != self.pivot)

    @property
    def pivot_card(self) -> int:
        return self.cards[self.subset.index(self.pivot)]

    def completed(self) -> np.ndarray:
        """All K_pivot levels, shape (K_pivot, rest cells); last level is 1 - sum of the others."""
        solved = self.z.reshape(self.pivot_card - 1, -1)
        return np.vstack([solved, 1.0 - solved.sum(axis=0, keepdims=True)])


def to_probabilities(table: ContingencyTable, counter: Counter | None = None) -> JointDistribution:
    """Divide a (possibly noisy) table by its own total; totals <= 0 give the uniform table."""
    values = np.asarray(table.values, dtype=float)
    total = values.sum()
    if total > 0:
        probs = values / total
    else:
        log.debug("table over %s has nonpositive total %.4g; using uniform", table.subset, total)
        if counter is not None:
            counter["nonpositive_total"] += 1
        probs = np.full(values.shape, 1.0 / values.size)
    return JointDistribution(table.subset, table.cards, probs)


def _lookup(sources: Mapping, subset: Sequence[str]):
    key = frozenset(subset)
    for k, v in sources.items():
        if frozenset(k) == key:
            if tuple(v.subset) != tuple(subset):
                raise ReconstructionError(f"source over {v.subset} is not ordered as {subset}")
            return v
    raise ReconstructionError(f"missing source joint over {sorted(subset)}")


def build_system(subset: Sequence[str], cards: Sequence[int], pivot: str, sources: Mapping,
                 counter: Counter | None = None) -> BlockLinearSystem:
    """Assemble the linear system for the joint over ``subset`` given its (j-1)-way joints.

    ``sources`` maps attribute subsets to tables (joint distributions or
    sanitized tables; only ratios within a table matter).
    """
    subset, cards = tuple(subset), tuple(int(k) for k in cards)
    if len(subset) < 2:
        raise ValueError("a linear system needs at least two attributes")
    if pivot not in subset:
        raise ValueError(f"pivot {pivot!r} not in {subset}")
    pos = {n: i for i, n in enumerate(subset)}
    rest = tuple(n for n in subset if n != pivot)
    rest_cards = tuple(cards[pos[n]] for n in rest)
    k_pivot = cards[pos[pivot]]
    n_rest = math.prod(rest_cards)
    rest_levels = decode(np.arange(n_rest), rest_cards)
    rest_table = _lookup(sources, rest)

    A_parts, b_parts, row_index = [], [], []
    for y in rest:
        given = tuple(n for n in rest if n != y)
        gpos = [rest.index(n) for n in given]
        gcards = tuple(rest_cards[i] for i in gpos)
        coef = conditional(rest_table, y, given, counter)
        b = conditional(_lookup(sources, tuple(n for n in subset if n != y)), pivot, given, counter)
        gidx = encode(rest_levels[:, gpos], gcards) if given else np.zeros(n_rest, dtype=np.int64)
        yval = rest_levels[:, rest.index(y)]
        A_y = np.zeros((math.prod(gcards), n_rest))
        A_y[gidx, np.arange(n_rest)] = coef[gidx, yval]
        A_parts.append(A_y)
        b_parts.append(b[:, :k_pivot - 1])
        row_index.extend((y, g) for g in range(A_y.shape[0]))

    A = np.vstack(A_parts)
    B = np.vstack(b_parts)
    if A.size > MAX_BLOCK_ENTRIES:
        raise ReconstructionError(
            f"system for {subset} needs a {A.shape[0]}x{A.shape[1]} dense block; "
            f"limit is {MAX_BLOCK_ENTRIES} entries")
    return BlockLinearSystem(subset, cards, pivot, [(A, B[:, r].copy()) for r in range(k_pivot - 1)],
                             row_index)


def _ridge(A: np.ndarray, B: np.ndarray, lam: float) -> np.ndarray:
    # (A^T A + lam I)^{-1} A^T B = V diag(s / (s^2 + lam)) U^T B.  Singular values
    # at rounding level are exact zeros of A (e.g. duplicated columns); left in,
    # s / lam would turn their 1e-16 noise into O(1e-6) error for tiny lam.
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size:
        s = np.where(s > s[0] * max(A.shape) * np.finfo(float).eps, s, 0.0)
    return Vt.T @ ((s / (s * s + lam))[:, None] * (U.T @ B))


def tikhonov_solve(system: BlockLinearSystem, lam: float = DEFAULT_LAMBDA) -> ConditionalSolution:
    """Ridge-regularized least squares, block by block."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not system.blocks:
        raise ValueError("empty system")
    for A, b in system.blocks:
        if not (np.isfinite(A).all() and np.isfinite(b).all()):
            raise ReconstructionError(f"non-finite coefficients in system for {system.subset}")

    # blocks that share one coefficient matrix are solved together
    groups: dict[int, list[int]] = {}
    for i, (A, _) in enumerate(system.blocks):
        groups.setdefault(id(A), []).append(i)
    zs: list[np.ndarray] = [None] * len(system.blocks)
    resid = 0.0
    for idx in groups.values():
        A = system.blocks[idx[0]][0]
        B = np.column_stack([system.blocks[i][1] for i in idx])
        Z = _ridge(A, B, lam)
        if B.size:
            resid = max(resid, float(np.abs(A @ Z - B).max()))
        for col, i in enumerate(idx):
            zs[i] = Z[:, col]
    return ConditionalSolution(np.concatenate(zs), lam, resid, system.subset, system.cards,
                               system.pivot)


def lift_joint(solution: ConditionalSolution, base: ContingencyTable) -> JointDistribution:
    """Joint over the solution's subset = completed conditional x joint of the rest."""
    rest = solution.rest
    if tuple(base.subset) != rest:
        raise ReconstructionError(f"base over {base.subset} does not match {rest}")
    cond = solution.completed()
    if cond.shape[1] != base.values.size:
        raise ReconstructionError("conditional and base cell counts differ")
    joint = cond * np.asarray(base.values, dtype=float)[None, :]
    rest_cards = tuple(base.cards)
    arr = joint.reshape((solution.pivot_card,) + rest_cards)
    arr = np.moveaxis(arr, 0, solution.subset.index(solution.pivot))
    return JointDistribution(solution.subset, solution.cards, arr.reshape(-1))


def correct_and_normalize(raw: ContingencyTable, counter: Counter | None = None) -> JointDistribution:
    """Truncate negative cells at zero and rescale to sum one.

    If no cell is positive the uniform distribution is returned and
    ``counter["uniform_fallback"]`` is incremented.
    """
    v = np.clip(np.asarray(raw.values, dtype=float), 0.0, None)
    s = v.sum()
    if s > 0:
        probs = v / s
    else:
        log.debug("no positive cell in joint over %s; falling back to uniform", raw.subset)
        if counter is not None:
            counter["uniform_fallback"] += 1
        probs = np.full(v.shape, 1.0 / v.size)
    return JointDistribution(raw.subset, raw.cards, probs, normalized=True)


@dataclass
class ReconstructionReport:
    steps: list[dict] = field(default_factory=list)
    warnings: Counter = field(default_factory=Counter)
    lam: float = DEFAULT_LAMBDA

    def to_json(self) -> dict:
        return {"lambda": self.lam, "steps": self.steps, "warnings": dict(sorted(self.warnings.items()))}


def choose_pivot(subset: Sequence[str], schema: AttributeSchema, policy: str,
                 seed: int, replicate: int) -> str:
    if policy == "first-attribute":
        return subset[0]
    if policy == "last-attribute":
        return subset[-1]
    if policy != "random":
        raise ValueError(f"unknown pivot policy {policy!r}; expected one of {PIVOT_POLICIES}")
    mask = sum(1 << schema.index(n) for n in subset)
    rng = substream(seed, replicate, PIVOT, mask)
    return subset[int(rng.integers(len(subset)))]


def reconstruct_full(sanitized: Mapping[Sequence[str], ContingencyTable], schema: AttributeSchema,
                     lam: float = DEFAULT_LAMBDA, *, seed: int = 0, replicate: int = 0,
                     pivot_policy: str = "random",
                     report: ReconstructionReport | None = None) -> JointDistribution:
    """Normalized joint over all schema attributes from the (sanitized) query tables.

    Joints are resolved on demand from the top down and memoized:

    * a subset with its own table in ``sanitized`` uses that table, normalized;
    * a subset no larger than the smallest query that is contained in one or
      more query tables uses the average of their (normalized) marginals;
    * anything else is solved from its (j-1)-way sub-joints.

    Only the final full joint is truncated and renormalized.  No privacy
    budget is spent here.
    """
    report = report if report is not None else ReconstructionReport(lam=lam)
    report.lam = lam
    counter = report.warnings
    direct = {}
    for key, table in sanitized.items():
        sub = schema.canonical(key)
        if tuple(table.subset) != sub:
            raise SchemaError(f"table subset {table.subset} does not match key {sub}")
        direct[frozenset(sub)] = to_probabilities(table, counter)
    if not direct:
        raise SchemaError("no query tables given")
    covered = set().union(*direct)
    missing = [n for n in schema.names if n not in covered]
    if missing:
        raise SchemaError(f"attributes not covered by any query: {missing}")
    p0 = min(len(k) for k in direct)
    memo: dict[frozenset, JointDistribution] = {}

    def joint(sub: tuple[str, ...]) -> JointDistribution:
        key = frozenset(sub)
        if key in memo:
            return memo[key]
        cards = schema.cards_of(sub)
        if key in direct:
            out = direct[key]
            report.steps.append({"subset": list(sub), "source": "query"})
        elif len(sub) <= p0 and any(key <= q for q in direct):
            parents = [q for q in sorted(direct, key=lambda q: sorted(schema.index(n) for n in q))
                       if key <= q]
            probs = np.mean([marginalize(direct[q], sub).values for q in parents], axis=0)
            out = JointDistribution(sub, cards, probs)
            report.steps.append({"subset": list(sub), "source": "marginal",
                                 "parents": [list(schema.canonical(q)) for q in parents]})
        elif len(sub) >= 2:
            pivot = choose_pivot(sub, schema, pivot_policy, seed, replicate)
            sources = {frozenset(s): joint(s) for s in itertools.combinations(sub, len(sub) - 1)}
            system = build_system(sub, cards, pivot, sources, counter)
            sol = tikhonov_solve(system, lam)
            rest = tuple(n for n in sub if n != pivot)
            out = lift_joint(sol, sources[frozenset(rest)])
            report.steps.append({"subset": list(sub), "source": "solved", "pivot": pivot,
                                 "equations": system.n_equations, "unknowns": system.n_unknowns,
                                 "residual_norm": sol.residual_norm})
        else:
            raise ReconstructionError(f"no source for {sub}")
        memo[key] = out
        return out

    return correct_and_normalize(joint(schema.names), counter)
