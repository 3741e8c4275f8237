import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cipherdp.tables import (AttributeSchema, ContingencyTable, Dataset, QuerySet, SchemaError,
                             cell_count, conditional, couple_attributes, decode,
                             decouple_attributes, encode, marginalize, tabulate)


def schema_of(*cards):
    return AttributeSchema.from_cardinalities([(f"V{i + 1}", k) for i, k in enumerate(cards)])


def random_dataset(cards, n, seed=0):
    schema = schema_of(*cards)
    rng = np.random.default_rng(seed)
    codes = np.column_stack([rng.integers(0, k, n) for k in cards])
    return Dataset(schema, codes)


class TestSchema:
    def test_rejects_duplicates_and_unary(self):
        with pytest.raises(SchemaError):
            AttributeSchema.from_cardinalities([("a", 2), ("a", 3)])
        with pytest.raises(SchemaError):
            AttributeSchema.from_cardinalities([("a", 1)])

    def test_rejects_overflowing_domain(self):
        with pytest.raises(SchemaError):
            AttributeSchema.from_cardinalities([(f"x{i}", 10) for i in range(20)])

    def test_json_round_trip(self):
        s = AttributeSchema.from_json({"attributes": [{"name": "sex", "levels": ["m", "f"]},
                                                      {"name": "age", "levels": ["y", "m", "o"]}]})
        assert s.cards == (2, 3)
        assert AttributeSchema.from_json(s.to_json()) == s

    def test_canonical_order(self):
        s = schema_of(2, 2, 3)
        assert s.canonical(["V3", "V1"]) == ("V1", "V3")
        with pytest.raises(SchemaError):
            s.canonical(["V9"])


class TestCellIndex:
    def test_first_attribute_most_significant(self):
        assert encode([1, 0, 2], (2, 2, 3)) == 8
        assert tuple(decode(8, (2, 2, 3))) == (1, 0, 2)
        assert encode([0, 1, 0], (2, 2, 3)) == 3

    @given(st.lists(st.integers(2, 5), min_size=1, max_size=5), st.data())
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, cards, data):
        size = int(np.prod(cards))
        x = data.draw(st.integers(0, size - 1))
        assert encode(decode(x, cards), cards) == x


class TestTabulate:
    def test_small_example(self):
        ds = Dataset(schema_of(2, 2), np.array([[0, 0], [0, 0], [1, 0], [1, 1]]))
        assert tabulate(ds, ["V1", "V2"]).values.tolist() == [2, 0, 1, 1]

    def test_empty_subset(self):
        ds = random_dataset((2, 2), 5)
        with pytest.raises(SchemaError, match="empty query subset"):
            tabulate(ds, [])

    def test_conserves_n(self):
        ds = random_dataset((2, 3, 4), 77)
        assert tabulate(ds, ds.schema.names).values.sum() == 77

    def test_bad_codes_rejected(self):
        with pytest.raises(SchemaError):
            Dataset(schema_of(2, 2), np.array([[0, 2]]))
        with pytest.raises(SchemaError):
            Dataset(schema_of(2, 2), np.array([[0, -1]]))

    def test_unknown_attribute(self):
        with pytest.raises(SchemaError):
            tabulate(random_dataset((2, 2), 5), ["V7"])


class TestMarginalize:
    def test_row_sums_and_identity(self):
        t = ContingencyTable(("V1", "V2"), (2, 2), np.array([2, 0, 1, 1]))
        assert marginalize(t, ["V1"]).values.tolist() == [2, 2]
        assert marginalize(t, ["V1", "V2"]).values.tolist() == [2, 0, 1, 1]

    def test_not_a_subset(self):
        t = ContingencyTable(("V1", "V2"), (2, 2), np.array([2, 0, 1, 1]))
        with pytest.raises(SchemaError):
            marginalize(t, ["V3"])

    def test_commutes_with_tabulation(self):
        ds = random_dataset((2, 3, 2), 50, seed=4)
        for k in (1, 2):
            for sub in itertools.combinations(ds.schema.names, k):
                for sup in itertools.combinations(ds.schema.names, k + 1):
                    if set(sub) <= set(sup):
                        direct = tabulate(ds, sub).values
                        via = marginalize(tabulate(ds, sup), sub).values
                        assert np.array_equal(direct, via)

    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=40, deadline=None)
    def test_linear(self, seed, a, b):
        rng = np.random.default_rng(seed)
        sub, cards = ("V1", "V2", "V3"), (2, 3, 2)
        t1 = ContingencyTable(sub, cards, rng.normal(size=12))
        t2 = ContingencyTable(sub, cards, rng.normal(size=12))
        mix = t1.replace(a * t1.values + b * t2.values)
        lhs = marginalize(mix, ["V1", "V3"]).values
        rhs = a * marginalize(t1, ["V1", "V3"]).values + b * marginalize(t2, ["V1", "V3"]).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_commutation_property(self, seed):
        rng = np.random.default_rng(seed)
        cards = tuple(rng.integers(2, 4, size=4))
        ds = random_dataset(cards, int(rng.integers(1, 60)), seed)
        names = ds.schema.names
        sup = tuple(n for n in names if rng.random() < 0.7) or names
        sub = sup[: max(1, len(sup) - 1)]
        assert np.array_equal(tabulate(ds, sub).values, marginalize(tabulate(ds, sup), sub).values)


class TestConditional:
    def test_uniform(self):
        t = ContingencyTable(("V1", "V2"), (2, 2), np.full(4, 0.25), "probabilities")
        np.testing.assert_allclose(conditional(t, "V2", ["V1"]), [[0.5, 0.5], [0.5, 0.5]])

    def test_arithmetic(self):
        t = ContingencyTable(("V1", "V2"), (2, 2), np.array([0.5, 0, 0.25, 0.25]), "probabilities")
        np.testing.assert_allclose(conditional(t, "V2", ["V1"]), [[1, 0], [0.5, 0.5]])

    def test_zero_marginal_rule(self):
        from collections import Counter
        t = ContingencyTable(("V1", "V2"), (2, 2), np.array([0, 0, 0.5, 0.5]), "probabilities")
        c = Counter()
        np.testing.assert_allclose(conditional(t, "V2", ["V1"], c), [[0.5, 0.5], [0.5, 0.5]])
        assert c["zero_marginal"] == 1

    def test_negative_mass_slice_is_uniform(self):
        t = ContingencyTable(("V1", "V2"), (2, 3), np.array([-1, 0.5, 0.2, 1, 2, 3.0]),
                             sanitized=True)
        out = conditional(t, "V2", ["V1"])
        np.testing.assert_allclose(out[0], [1 / 3] * 3)
        np.testing.assert_allclose(out[1], [1 / 6, 2 / 6, 3 / 6])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        t = ContingencyTable(("V1", "V2", "V3"), (2, 3, 4), rng.random(24))
        out = conditional(t, "V2", ["V3", "V1"])
        assert out.shape == (8, 3)
        np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-12)

    def test_sanitized_values_allowed(self):
        t = ContingencyTable(("V1",), (2,), np.array([-0.3, 1.7]), "probabilities", sanitized=True)
        assert t.values.min() < 0


class TestCellCount:
    def test_full_table(self):
        assert cell_count(schema_of(*[5] * 10), "full") == 9_765_625

    def test_all_two_way(self):
        assert cell_count(schema_of(2, 2, 2), "all 2-way") == 12
        # pair products 4, 6, 6, 6, 6, 9
        cards = (2, 2, 3, 3)
        brute = sum(a * b for a, b in itertools.combinations(cards, 2))
        assert brute == 37
        assert cell_count(schema_of(*cards), 2) == brute

    def test_k_too_large(self):
        with pytest.raises(SchemaError):
            cell_count(schema_of(2, 2), "all 3-way")

    def test_explicit_subsets(self):
        s = schema_of(2, 2, 3, 3)
        assert cell_count(s, [["V1", "V2", "V3"], ["V4"]]) == 15
        assert cell_count(s, "full") == 36


class TestQuerySet:
    def test_validation(self):
        s = schema_of(2, 2, 2)
        with pytest.raises(SchemaError, match="not covered"):
            QuerySet.build(s, [["V1", "V2"]])
        with pytest.raises(SchemaError, match="duplicate"):
            QuerySet.build(s, [["V1", "V2"], ["V2", "V1"], ["V3"]])
        with pytest.raises(SchemaError, match="V9"):
            QuerySet.build(s, [["V1", "V9"]])
        q = QuerySet.build(s, [["V2", "V1"], ["V3"]])
        assert q.queries == (("V1", "V2"), ("V3",))
        assert q.min_dim == 1


class TestCoupling:
    def test_cardinalities(self):
        schema = AttributeSchema.from_cardinalities([("Class", 2), ("CR", 3), ("IR", 3), ("CO", 3)])
        ds = Dataset(schema, np.zeros((3, 4), dtype=int))
        c1, _ = couple_attributes(ds, "Class", "CR")
        assert c1.schema.cardinality("Class/CR") == 6
        c2, _ = couple_attributes(ds, "IR", "CO")
        assert c2.schema.cardinality("IR/CO") == 9

    def test_round_trip(self):
        ds = random_dataset((2, 3, 4), 100, seed=3)
        for a, b in itertools.permutations(ds.schema.names, 2):
            coupled, info = couple_attributes(ds, a, b)
            assert coupled.schema.p == 2
            assert decouple_attributes(coupled, info) == ds

    def test_unknown_attribute(self):
        with pytest.raises(SchemaError):
            couple_attributes(random_dataset((2, 2), 4), "V1", "nope")
