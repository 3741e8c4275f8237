import json
import math
from fractions import Fraction

import numpy as np
import pytest

from cipherdp import io
from cipherdp.cli import EXIT_INVALID, EXIT_OK, main, parse_epsilon
from cipherdp.inference import dgp_simulate
from cipherdp.tables import AttributeSchema, Dataset, QuerySet, SchemaError


@pytest.fixture
def files(tmp_path):
    ds = dgp_simulate(200, np.random.default_rng(0))
    io.write_csv(ds, tmp_path / "data.csv")
    io.save_schema(ds.schema, tmp_path / "schema.json")
    (tmp_path / "q.json").write_text(json.dumps([list(q) for q in QuerySet.all_kway(ds.schema, 2)]))
    return tmp_path, ds


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestIO:
    def test_csv_round_trip(self, files):
        tmp, ds = files
        assert io.read_csv(tmp / "data.csv", ds.schema) == ds

    def test_csv_column_order_and_header(self, tmp_path):
        schema = AttributeSchema.from_cardinalities([("A", 2), ("B", 3)])
        (tmp_path / "x.csv").write_text("B,A\n2,1\n0,0\n")
        ds = io.read_csv(tmp_path / "x.csv", schema)
        assert ds.codes.tolist() == [[1, 2], [0, 0]]
        (tmp_path / "y.csv").write_text("A,C\n0,0\n")
        with pytest.raises(SchemaError, match="header"):
            io.read_csv(tmp_path / "y.csv", schema)
        (tmp_path / "z.csv").write_text("A,B\n0,x\n")
        with pytest.raises(SchemaError, match=":2"):
            io.read_csv(tmp_path / "z.csv", schema)

    def test_out_of_range_code(self, tmp_path):
        schema = AttributeSchema.from_cardinalities([("A", 2)])
        (tmp_path / "x.csv").write_text("A\n2\n")
        with pytest.raises(SchemaError):
            io.read_csv(tmp_path / "x.csv", schema)

    def test_schema_and_queries(self, files):
        tmp, ds = files
        assert io.load_schema(tmp / "schema.json") == ds.schema
        assert len(io.load_queries(tmp / "q.json", ds.schema)) == 6
        (tmp / "bad.json").write_text('[["V1", "V9"]]')
        with pytest.raises(SchemaError, match="V9"):
            io.load_queries(tmp / "bad.json", ds.schema)

    def test_bankruptcy_loader(self, tmp_path):
        (tmp_path / "b.txt").write_text("P,P,A,A,A,P,NB\nN,N,A,N,N,N,B\n\n")
        ds = io.load_bankruptcy(tmp_path / "b.txt")
        assert ds.n == 2 and ds.schema.p == 7
        assert ds.codes.tolist() == [[0, 0, 1, 1, 1, 0, 1], [2, 2, 1, 2, 2, 2, 0]]
        (tmp_path / "c.txt").write_text("P,P,A\n")
        with pytest.raises(SchemaError):
            io.load_bankruptcy(tmp_path / "c.txt")


class TestParseEpsilon:
    @pytest.mark.parametrize("text,value", [
        ("1", 1.0), ("0.5", 0.5), ("1/3", Fraction(1, 3)), ("e", math.e),
        ("e^2", math.exp(2)), ("e^-2", math.exp(-2)), ("exp(-1)", math.exp(-1)), ("inf", math.inf),
    ])
    def test_forms(self, text, value):
        assert parse_epsilon(text) == value

    def test_garbage(self):
        with pytest.raises(ValueError):
            parse_epsilon("lots")


class TestSynthesize:
    def test_writes_replicates_and_report(self, files, capsys):
        tmp, ds = files
        code, out, _ = run(capsys, "synthesize", "--data", tmp / "data.csv", "--schema",
                           tmp / "schema.json", "--queries", tmp / "q.json", "--epsilon", "1",
                           "--m", 5, "--seed", 3, "--out", tmp / "out")
        assert code == EXIT_OK
        summary = json.loads(out)
        assert summary["files"] == [f"synthetic_{l}.csv" for l in range(1, 6)]
        for name in summary["files"]:
            assert io.read_csv(tmp / "out" / name, ds.schema).n == ds.n
        report = json.loads((tmp / "out" / "report.json").read_text())
        assert Fraction(report["ledger"]["total"]) == 1
        assert report["config"]["seed"] == 3

    def test_full_table_domain_guard(self, tmp_path, capsys):
        schema = AttributeSchema.from_cardinalities([(f"V{i}", 5) for i in range(1, 11)])
        ds = Dataset(schema, np.zeros((4, 10), dtype=int))
        io.write_csv(ds, tmp_path / "d.csv")
        io.save_schema(schema, tmp_path / "s.json")
        base = ["synthesize", "--data", tmp_path / "d.csv", "--schema", tmp_path / "s.json",
                "--method", "full", "--epsilon", "1", "--m", 1, "--out", tmp_path / "o"]
        code, _, err = run(capsys, *base)
        assert code == EXIT_INVALID
        assert "9765625" in err.replace(",", "") or "force" in err
        assert run(capsys, *base, "--force")[0] == EXIT_OK

    def test_unknown_query_attribute_named(self, files, capsys):
        tmp, _ = files
        (tmp / "bad.json").write_text('[["V1", "V7"]]')
        code, _, err = run(capsys, "synthesize", "--data", tmp / "data.csv", "--schema",
                           tmp / "schema.json", "--queries", tmp / "bad.json", "--out", tmp / "o")
        assert code == EXIT_INVALID
        assert "V7" in err

    def test_mwem_needs_iterations(self, files, capsys):
        tmp, _ = files
        args = ["synthesize", "--data", tmp / "data.csv", "--schema", tmp / "schema.json",
                "--queries", tmp / "q.json", "--method", "mwem", "--out", tmp / "o"]
        assert run(capsys, *args)[0] == EXIT_INVALID
        assert run(capsys, *args, "--mwem-iters", 5)[0] == EXIT_OK

    def test_config_file_and_flag_precedence(self, files, capsys):
        tmp, _ = files
        conf = {"data": str(tmp / "data.csv"), "schema": str(tmp / "schema.json"),
                "queries": str(tmp / "q.json"), "m": 2, "seed": 1, "out": str(tmp / "c")}
        (tmp / "conf.json").write_text(json.dumps(conf))
        code, out, _ = run(capsys, "synthesize", "--config", tmp / "conf.json", "--m", 3)
        assert code == EXIT_OK
        assert len(json.loads(out)["files"]) == 3
        report = json.loads((tmp / "c" / "report.json").read_text())
        assert report["config"]["seed"] == 1

    def test_missing_file(self, tmp_path, capsys):
        code, _, _ = run(capsys, "synthesize", "--data", tmp_path / "nope.csv",
                         "--schema", tmp_path / "nope.json", "--out", tmp_path / "o")
        assert code == EXIT_INVALID

    def test_rerun_byte_identical(self, files, capsys):
        tmp, _ = files
        for method in ("cipher", "mwem", "full"):
            outs = []
            for run_dir in ("r1", "r2"):
                run(capsys, "synthesize", "--data", tmp / "data.csv", "--schema",
                    tmp / "schema.json", "--queries", tmp / "q.json", "--method", method,
                    "--mwem-iters", 10, "--m", 3, "--seed", 9, "--out", tmp / method / run_dir)
                outs.append({p.name: p.read_bytes() for p in (tmp / method / run_dir).iterdir()})
            assert outs[0] == outs[1]


class TestEvaluate:
    def test_identity_is_zero(self, files, capsys):
        tmp, _ = files
        code, out, _ = run(capsys, "evaluate", "--original", tmp / "data.csv", "--synthetic",
                           tmp / "data.csv", tmp / "data.csv", "--schema", tmp / "schema.json",
                           "--sss", "--outcome", "V4", "--covariates", "V1,V2,V3")
        assert code == EXIT_OK
        res = json.loads(out)
        assert all(v == 0 for v in res["tvd"].values())
        assert set(res["tvd"]) == {"1", "2", "3", "4"}
        assert res["linf"]["value"] == 0
        assert res["sss"]["counts"]["Best"] == 10

    def test_schema_mismatch(self, files, capsys):
        tmp, _ = files
        (tmp / "other.csv").write_text("V1,V2,V3\n0,0,0\n")
        code, _, err = run(capsys, "evaluate", "--original", tmp / "data.csv", "--synthetic",
                           tmp / "other.csv", "--schema", tmp / "schema.json")
        assert code == EXIT_INVALID
        assert "header" in err

    def test_writes_json(self, files, capsys):
        tmp, _ = files
        code, out, _ = run(capsys, "evaluate", "--original", tmp / "data.csv", "--synthetic",
                           tmp / "data.csv", "--schema", tmp / "schema.json", "--k", "2",
                           "--metrics", "tvd", "--out", tmp / "ev.json")
        assert code == EXIT_OK
        assert json.loads((tmp / "ev.json").read_text()) == json.loads(out)
        assert "linf" not in json.loads(out)


class TestExperimentAndCellcount:
    def test_experiment_smoke(self, tmp_path, capsys):
        args = ["experiment1", "--n", 200, "--epsilons", "1,e^2", "--reps", 2, "--m", 2,
                "--seed", 4, "--out", tmp_path / "e.json"]
        code, out, _ = run(capsys, *args)
        assert code == EXIT_OK
        res = json.loads(out)
        assert len(res["cells"]) == 2 * 3
        cell = res["cells"][0]["summary"]
        assert {"tvd1", "tvd2", "tvd3", "linf_2way"} <= set(cell)
        first = (tmp_path / "e.json").read_bytes()
        run(capsys, *args)
        assert (tmp_path / "e.json").read_bytes() == first

    def test_experiment_default_grid(self, capsys):
        code, out, _ = run(capsys, "experiment1", "--n", 200, "--methods", "full", "--reps", 1,
                           "--m", 2, "--no-sss")
        assert code == EXIT_OK
        eps = [c["epsilon"] for c in json.loads(out)["cells"]]
        assert eps == pytest.approx([math.exp(k) for k in (-2, -1, 0, 1, 2)])

    def test_experiment_unknown_method(self, capsys):
        assert run(capsys, "experiment1", "--methods", "nope", "--reps", 1)[0] == EXIT_INVALID

    def test_cellcount(self, files, capsys):
        tmp, _ = files
        code, out, _ = run(capsys, "cellcount", "--p", 10, "--K", 5, "--tables", "full,2,4")
        assert code == EXIT_OK
        cells = json.loads(out)["cells"]
        assert cells == {"full": 5 ** 10, "all 2-way": 45 * 25, "all 4-way": 210 * 625}
        code, out, _ = run(capsys, "cellcount", "--schema", tmp / "schema.json", "--tables",
                           f"2,{tmp / 'q.json'}")
        cells = json.loads(out)["cells"]
        assert cells["all 2-way"] == 37 == cells[str(tmp / "q.json")]

    def test_cellcount_bad_K(self, capsys):
        assert run(capsys, "cellcount", "--p", 3, "--K", "2,2")[0] == EXIT_INVALID
