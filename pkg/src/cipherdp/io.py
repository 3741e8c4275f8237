"""Reading and writing microdata, schemas and query sets."""
from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .tables import Attribute, AttributeSchema, Dataset, QuerySet, SchemaError


def load_schema(path) -> AttributeSchema:
    with open(path) as fh:
        return AttributeSchema.from_json(json.load(fh))


def save_schema(schema: AttributeSchema, path) -> None:
    write_json(schema.to_json(), path)


def load_queries(path, schema: AttributeSchema) -> QuerySet:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, list) or not all(isinstance(q, list) for q in doc):
        raise SchemaError("query file must be a JSON list of attribute-name lists")
    return QuerySet.build(schema, doc)


def read_csv(path, schema: AttributeSchema) -> Dataset:
    """Read integer-coded microdata; the header must name exactly the schema's attributes."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if sorted(header) != sorted(schema.names):
            raise SchemaError(f"{path}: header {header} does not match schema attributes "
                              f"{list(schema.names)}")
        order = [header.index(n) for n in schema.names]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [int(row[i]) for i in order]
            except (ValueError, IndexError):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} integer codes") from None
            rows.append(vals)
    codes = np.array(rows, dtype=np.int64).reshape(-1, schema.p)
    return Dataset(schema, codes)


def write_csv(dataset: Dataset, path) -> None:
    def body(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.schema.names)
        w.writerows(dataset.codes.tolist())
    _atomic_write(path, body, newline="")


def write_json(obj, path) -> None:
    _atomic_write(path, lambda fh: fh.write(dumps(obj) + "\n"))


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)


def _atomic_write(path, writer, newline=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline=newline) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# UCI "Qualitative Bankruptcy" layout: seven comma-separated letter codes per line.
BANKRUPTCY_ATTRIBUTES = (
    ("IR", ("P", "A", "N")),
    ("MR", ("P", "A", "N")),
    ("FF", ("P", "A", "N")),
    ("CR", ("P", "A", "N")),
    ("CO", ("P", "A", "N")),
    ("OR", ("P", "A", "N")),
    ("Class", ("B", "NB")),
)


def load_bankruptcy(path) -> Dataset:
    """Load the qualitative bankruptcy data file (fetched manually from UCI)."""
    schema = AttributeSchema(tuple(Attribute(n, lv) for n, lv in BANKRUPTCY_ATTRIBUTES))
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != len(BANKRUPTCY_ATTRIBUTES):
                raise SchemaError(f"{path}:{lineno}: expected 7 fields, got {len(fields)}")
            try:
                rows.append([lv.index(f) for f, (_, lv) in zip(fields, BANKRUPTCY_ATTRIBUTES)])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: unknown level in {fields}") from None
    return Dataset(schema, np.array(rows, dtype=np.int64).reshape(-1, len(BANKRUPTCY_ATTRIBUTES)))
