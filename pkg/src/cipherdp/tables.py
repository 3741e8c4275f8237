"""Attribute schemas, contingency tables and the mixed-radix cell space.

Cells of a table over an attribute subset are laid out in schema order with
the first attribute most significant (C order), so a flat vector can always be
reshaped to ``table.cards`` and summed over axes with plain numpy.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

# flat indices are int64
MAX_CELLS = np.iinfo(np.int64).max

COUNTS = "counts"
PROBABILITIES = "probabilities"


class SchemaError(ValueError):
    """Invalid schema, query set, or data that does not match its schema."""


@dataclass(frozen=True)
class Attribute:
    name: str
    levels: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        if not self.attributes:
            raise SchemaError("schema has no attributes")
        names = [a.name for a in self.attributes]
        dup = [n for n, c in Counter(names).items() if c > 1]
        if dup:
            raise SchemaError(f"duplicate attribute names: {dup}")
        for a in self.attributes:
            if a.cardinality < 2:
                raise SchemaError(f"attribute {a.name!r} needs at least 2 levels")
        if math.prod(self.cards) > MAX_CELLS:
            raise SchemaError("full domain size exceeds the int64 range")

    @classmethod
    def from_cardinalities(cls, spec) -> "AttributeSchema":
        """Build from ``{"V1": 2, ...}`` or ``[("V1", 2), ...]``; levels are labelled 0..K-1."""
        items = spec.items() if isinstance(spec, dict) else spec
        return cls(tuple(Attribute(str(n), tuple(str(i) for i in range(int(k)))) for n, k in items))

    @classmethod
    def from_json(cls, doc: dict) -> "AttributeSchema":
        try:
            attrs = tuple(Attribute(str(a["name"]), tuple(str(l) for l in a["levels"]))
                          for a in doc["attributes"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(attrs)

    def to_json(self) -> dict:
        return {"attributes": [{"name": a.name, "levels": list(a.levels)} for a in self.attributes]}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def cards(self) -> tuple[int, ...]:
        return tuple(a.cardinality for a in self.attributes)

    @property
    def p(self) -> int:
        return len(self.attributes)

    def index(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise SchemaError(f"unknown attribute {name!r}")

    def cardinality(self, name: str) -> int:
        return self.attributes[self.index(name)].cardinality

    def canonical(self, subset: Iterable[str]) -> tuple[str, ...]:
        """Return ``subset`` sorted into schema order; rejects unknown or repeated names."""
        subset = list(subset)
        idx = [self.index(n) for n in subset]
        if len(set(idx)) != len(idx):
            raise SchemaError(f"repeated attribute in {subset}")
        return tuple(self.names[i] for i in sorted(idx))

    def cards_of(self, subset: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.cardinality(n) for n in subset)

    def size(self, subset: Sequence[str] | None = None) -> int:
        return math.prod(self.cards if subset is None else self.cards_of(subset))


def encode(levels, cards: Sequence[int]):
    """Mixed-radix flat index of level tuple(s); last axis of ``levels`` indexes attributes."""
    levels = np.asarray(levels, dtype=np.int64)
    if len(cards) == 0:
        return np.zeros(levels.shape[:-1], dtype=np.int64) if levels.ndim > 1 else 0
    return np.ravel_multi_index(tuple(np.moveaxis(levels, -1, 0)), tuple(cards))


def decode(flat, cards: Sequence[int]):
    """Inverse of :func:`encode`: level tuple(s) with attributes on the last axis."""
    flat = np.asarray(flat, dtype=np.int64)
    if len(cards) == 0:
        return np.zeros(flat.shape + (0,), dtype=np.int64)
    return np.stack(np.unravel_index(flat, tuple(cards)), axis=-1)


@dataclass(frozen=True)
class Dataset:
    """Categorical microdata: ``codes[i, j]`` is record i's 0-based level of attribute j."""

    schema: AttributeSchema
    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != self.schema.p:
            raise SchemaError(f"codes must have shape (n, {self.schema.p}), got {codes.shape}")
        bad = (codes < 0) | (codes >= np.asarray(self.schema.cards))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise SchemaError(f"record {i}: code {codes[i, j]} out of range for "
                              f"attribute {self.schema.names[j]!r}")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.codes[:, self.schema.index(name)]

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.schema == other.schema
                and np.array_equal(self.codes, other.codes))


@dataclass(frozen=True)
class ContingencyTable:
    """Counts or probabilities over the cells of ``subset`` (schema order).

    Sanitized tables may hold negative or >1 entries and are never rejected
    for it.
    """

    subset: tuple[str, ...]
    cards: tuple[int, ...]
    values: np.ndarray
    kind: str = COUNTS
    sanitized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (math.prod(self.cards),):
            raise SchemaError(f"table over {self.subset} needs {math.prod(self.cards)} cells, "
                              f"got shape {values.shape}")
        if len(self.subset) != len(self.cards):
            raise SchemaError("subset and cards differ in length")
        if self.kind not in (COUNTS, PROBABILITIES):
            raise SchemaError(f"unknown table kind {self.kind!r}")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "subset", tuple(self.subset))
        object.__setattr__(self, "cards", tuple(int(k) for k in self.cards))
        object.__setattr__(self, "values", values)

    @property
    def total(self) -> float:
        return self.values.sum()

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.cards)

    def axis(self, name: str) -> int:
        try:
            return self.subset.index(name)
        except ValueError:
            raise SchemaError(f"attribute {name!r} not in table over {self.subset}") from None

    def is_normalized(self, tol: float = 1e-9) -> bool:
        v = self.values
        return bool(np.all(v >= -tol) and np.all(v <= 1 + tol) and abs(v.sum() - 1) <= tol)

    def replace(self, values, **kw) -> "ContingencyTable":
        return dataclasses.replace(self, values=values, **kw)


@dataclass(frozen=True)
class QuerySet:
    """Attribute subsets whose tables are released; subsets are kept in schema order."""

    queries: tuple[tuple[str, ...], ...]

    @classmethod
    def build(cls, schema: AttributeSchema, queries: Iterable[Iterable[str]]) -> "QuerySet":
        qs = []
        for q in queries:
            q = list(q)
            if not q:
                raise SchemaError("empty query subset")
            qs.append(schema.canonical(q))
        out = cls(tuple(qs))
        out.validate(schema)
        return out

    @classmethod
    def all_kway(cls, schema: AttributeSchema, k: int) -> "QuerySet":
        if not 1 <= k <= schema.p:
            raise SchemaError(f"k={k} outside 1..{schema.p}")
        return cls(tuple(itertools.combinations(schema.names, k)))

    def validate(self, schema: AttributeSchema) -> None:
        if not self.queries:
            raise SchemaError("query set is empty")
        dup = [q for q, c in Counter(frozenset(q) for q in self.queries).items() if c > 1]
        if dup:
            raise SchemaError(f"duplicate query subsets: {[sorted(d) for d in dup]}")
        for q in self.queries:
            if not q:
                raise SchemaError("empty query subset")
            for name in q:
                schema.index(name)
        covered = {n for q in self.queries for n in q}
        missing = [n for n in schema.names if n not in covered]
        if missing:
            raise SchemaError(f"attributes not covered by any query: {missing}")

    @property
    def min_dim(self) -> int:
        return min(len(q) for q in self.queries)

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)


def tabulate(dataset: Dataset, subset: Sequence[str]) -> ContingencyTable:
    """Count the records falling in each cell of ``subset``."""
    if len(subset) == 0:
        raise SchemaError("empty query subset")
    schema = dataset.schema
    subset = schema.canonical(subset)
    cards = schema.cards_of(subset)
    cols = dataset.codes[:, [schema.index(n) for n in subset]]
    flat = encode(cols, cards) if dataset.n else np.zeros(0, dtype=np.int64)
    counts = np.bincount(flat, minlength=math.prod(cards)).astype(np.int64)
    return ContingencyTable(subset, cards, counts, COUNTS, False)


def marginalize(table: ContingencyTable, target: Sequence[str]) -> ContingencyTable:
    """Sum ``table`` down to the attributes in ``target``."""
    target = set(target)
    extra = target - set(table.subset)
    if extra:
        raise SchemaError(f"{sorted(extra)} not in table over {table.subset}")
    keep = tuple(n for n in table.subset if n in target)
    drop = tuple(i for i, n in enumerate(table.subset) if n not in target)
    values = table.array.sum(axis=drop) if drop else table.array
    cards = tuple(table.cards[table.subset.index(n)] for n in keep)
    return table.replace(np.reshape(values, -1), subset=keep, cards=cards)


def conditional(table, target: str, given: Sequence[str],
                counter: Counter | None = None) -> np.ndarray:
    """Pr(target | given) as an array of shape (cells of ``given``, K_target).

    Rows follow the table's own attribute order restricted to ``given``.  A
    ``given`` cell with total mass <= 0 gets the uniform distribution; each
    such fill increments ``counter["zero_marginal"]``.
    """
    if target in given:
        raise SchemaError(f"target {target!r} also listed as given")
    keep = [n for n in table.subset if n in set(given) or n == target]
    sub = marginalize(table, keep)
    arr = np.moveaxis(sub.array.astype(float), sub.axis(target), -1)
    k = arr.shape[-1]
    arr = arr.reshape(-1, k)
    mass = arr.sum(axis=1)
    out = np.empty_like(arr)
    ok = mass > 0
    out[ok] = arr[ok] / mass[ok, None]
    out[~ok] = 1.0 / k
    nbad = int((~ok).sum())
    if nbad:
        log.debug("uniform fill for %d zero-mass slices of Pr(%s | %s)", nbad, target, list(given))
        if counter is not None:
            counter["zero_marginal"] += nbad
    return out


def cell_count(schema: AttributeSchema, tables) -> int:
    """Number of stored cells for ``"full"``, ``"all k-way"`` (or an int k), or explicit subsets."""
    if isinstance(tables, str):
        spec = tables.strip().lower()
        if spec == "full":
            return schema.size()
        if spec.startswith("all ") and spec.endswith("-way"):
            tables = int(spec[4:-4])
        else:
            raise SchemaError(f"unrecognised table spec {tables!r}")
    if isinstance(tables, int):
        if not 1 <= tables <= schema.p:
            raise SchemaError(f"k={tables} outside 1..{schema.p}")
        tables = itertools.combinations(schema.names, tables)
    return sum(schema.size(schema.canonical(q)) for q in tables)


@dataclass(frozen=True)
class Coupling:
    """Record of a coupled attribute pair, enough to undo the coupling exactly."""

    name: str
    first: Attribute
    second: Attribute
    first_pos: int
    second_pos: int


def couple_attributes(dataset: Dataset, a: str, b: str,
                      name: str | None = None) -> tuple[Dataset, Coupling]:
    """Replace attributes ``a`` and ``b`` by their cross-classification.

    The product attribute takes ``a``'s column position; its code is
    ``code_a * K_b + code_b``.
    """
    schema = dataset.schema
    ia, ib = schema.index(a), schema.index(b)
    if ia == ib:
        raise SchemaError("cannot couple an attribute with itself")
    att_a, att_b = schema.attributes[ia], schema.attributes[ib]
    name = name or f"{a}/{b}"
    if name in schema.names and name not in (a, b):
        raise SchemaError(f"attribute {name!r} already exists")
    levels = tuple(f"{la}/{lb}" for la, lb in itertools.product(att_a.levels, att_b.levels))
    joint = dataset.codes[:, ia] * att_b.cardinality + dataset.codes[:, ib]

    attrs, cols = [], []
    for i, att in enumerate(schema.attributes):
        if i == ia:
            attrs.append(Attribute(name, levels))
            cols.append(joint)
        elif i != ib:
            attrs.append(att)
            cols.append(dataset.codes[:, i])
    new = Dataset(AttributeSchema(tuple(attrs)), np.stack(cols, axis=1) if cols else dataset.codes)
    return new, Coupling(name, att_a, att_b, ia, ib)


def decouple_attributes(dataset: Dataset, coupling: Coupling) -> Dataset:
    """Exact inverse of :func:`couple_attributes`."""
    schema = dataset.schema
    ic = schema.index(coupling.name)
    kb = coupling.second.cardinality
    joint = dataset.codes[:, ic]
    rest = [(att, dataset.codes[:, i]) for i, att in enumerate(schema.attributes) if i != ic]
    placed = {coupling.first_pos: (coupling.first, joint // kb),
              coupling.second_pos: (coupling.second, joint % kb)}
    attrs, cols, it = [], [], iter(rest)
    for pos in range(len(rest) + 2):
        att, col = placed[pos] if pos in placed else next(it)
        attrs.append(att)
        cols.append(col)
    return Dataset(AttributeSchema(tuple(attrs)), np.stack(cols, axis=1))
