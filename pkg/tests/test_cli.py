import csv
import json
import subprocess
import sys
import time

import pytest

from seroprev import fileio
from seroprev.cli import bundled, fmt, main
from seroprev.model import MainStudy, StratumTable, ValidationStudy

SCREENNC = bundled("examples/screennc")
BELGIUM = bundled("examples/belgium_synthetic")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _rows(table_text):
    lines = table_text.strip().splitlines()
    header = lines[0].split()
    return {ln.split()[0]: dict(zip(header, ln.split())) for ln in lines[2:]}


class TestEstimate:
    def test_screening_example(self, capsys):
        code, out, _ = run(capsys, "estimate", SCREENNC / "validation.csv", SCREENNC / "main.csv")
        assert code == 0
        rows = _rows(out)
        assert round(100 * float(rows["naive"]["point"]), 2) == 0.81
        assert float(rows["RG"]["point"]) == 0.0
        assert float(rows["RG"]["ci_low"]) == 0.0
        assert abs(float(rows["RG"]["ci_high"]) - 0.0100) <= 0.0010
        assert "truncated_point" in rows["RG"]["flags"]

    def test_json_reproduces_table(self, capsys):
        _, table_out, _ = run(capsys, "estimate", "--example", "belgium_synthetic")
        _, json_out, _ = run(capsys, "estimate", "--example", "belgium_synthetic",
                             "--format", "json")
        report = json.loads(json_out)
        rows = _rows(table_out)
        assert set(rows) == {"naive", "RG", "SRG", "SRGM"}
        for method, row in rows.items():
            est = report["estimates"][method]
            for col in ("point", "ci_low", "ci_high", "point_raw", "variance"):
                assert row[col] == fmt(est[col])
        assert len(report["estimates"]["SRG"]["dropped_strata"]) == 15

    def test_perfect_assay(self, capsys, tmp_path):
        fileio.write_validation(ValidationStudy(50, 50, 60, 60), tmp_path / "v.csv")
        fileio.write_main(MainStudy.unstratified(37, 400), tmp_path / "m.csv")
        code, out, _ = run(capsys, "estimate", tmp_path / "v.csv", tmp_path / "m.csv",
                           "--format", "json")
        est = json.loads(out)["estimates"]
        assert code == 0
        assert est["RG"]["point"] == est["naive"]["point"] == 37 / 400

    def test_unsampled_stratum_warns(self, capsys, tmp_path):
        fileio.write_validation(ValidationStudy(50, 48, 60, 59), tmp_path / "v.csv")
        fileio.write_main(MainStudy.from_records([(1, "a")] * 5 + [(0, "a")] * 45
                                                 + [(0, "b")] * 50), tmp_path / "m.csv")
        fileio.write_strata(StratumTable(("a", "b", "ghost"), [0.4, 0.4, 0.2]),
                            tmp_path / "s.csv")
        code, out, err = run(capsys, "estimate", tmp_path / "v.csv", tmp_path / "m.csv",
                             "--strata", tmp_path / "s.csv")
        assert code == 0
        assert "ghost" in err and "dropped" in err
        assert "restricted" in _rows(out)["SRG"]["flags"]

    def test_unknown_stratum_label(self, capsys, tmp_path):
        fileio.write_validation(ValidationStudy(50, 48, 60, 59), tmp_path / "v.csv")
        fileio.write_main(MainStudy.from_records([(1, "a"), (0, "nowhere")]), tmp_path / "m.csv")
        fileio.write_strata(StratumTable(("a",), [1.0]), tmp_path / "s.csv")
        code, _, err = run(capsys, "estimate", tmp_path / "v.csv", tmp_path / "m.csv",
                           "--strata", tmp_path / "s.csv")
        assert code == 2 and "nowhere" in err

    def test_schema_violation(self, capsys, tmp_path):
        (tmp_path / "v.csv").write_text("role,n,correct\nsensitivity,10,12\n")
        code, _, err = run(capsys, "estimate", tmp_path / "v.csv", SCREENNC / "main.csv")
        assert code == 2 and "line 2" in err

    def test_degenerate_assay(self, capsys, tmp_path):
        fileio.write_validation(ValidationStudy(10, 5, 10, 5), tmp_path / "v.csv")
        code, _, err = run(capsys, "estimate", tmp_path / "v.csv", SCREENNC / "main.csv")
        assert code == 4 and "uninformative" in err

    def test_out_dir_and_csv(self, capsys, tmp_path):
        code, out, _ = run(capsys, "estimate", "--example", "screennc", "--format", "csv",
                           "--out", tmp_path / "rep", "--no-truncate-plugin", "--level", "0.9")
        assert code == 0
        rows = list(csv.DictReader(out.splitlines()))
        assert [r["method"] for r in rows] == ["naive", "RG"]
        report = json.loads((tmp_path / "rep" / "estimates.json").read_text())
        assert report["inputs"]["truncate_plugin"] is False
        assert report["estimates"]["RG"]["level"] == 0.9
        assert float(rows[1]["ci_high"]) == report["estimates"]["RG"]["ci_high"]

    def test_bad_level(self, capsys):
        code, _, _ = run(capsys, "estimate", "--example", "screennc", "--level", "1.5")
        assert code == 2


class TestSimulate:
    def test_bundled_small_config(self, capsys, tmp_path):
        t0 = time.perf_counter()
        code, out, _ = run(capsys, "simulate", "dgp1_small.cfg", "--out", tmp_path)
        assert time.perf_counter() - t0 < 60
        assert code == 0
        with open(tmp_path / "results.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 20
        for r in rows:
            assert r["estimator"] == "RG"
            assert 0.0 <= float(r["coverage"]) <= 1.0
            float(r["mean_bias"])
        assert "DGP1" in out

    def _cfg(self, tmp_path, **kw):
        fields = {"dgp": "DGP2", "pi": "0.1", "sigma_e": "0.99", "sigma_p": "0.95",
                  "replicates": "5", "seed": "1"}
        fields.update(kw)
        p = tmp_path / "c.cfg"
        p.write_text("[simulation]\n" + "".join(f"{k} = {v}\n" for k, v in fields.items()))
        return p

    def test_unknown_dgp(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", self._cfg(tmp_path, dgp="DGP9"))
        assert code == 2 and "'dgp'" in err

    def test_unknown_field(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", self._cfg(tmp_path, replicats="5"))
        assert code == 2 and "replicats" in err

    def test_single_replicate(self, capsys, tmp_path):
        code, _, _ = run(capsys, "simulate", self._cfg(tmp_path, replicates="1"),
                         "--out", tmp_path)
        assert code == 0
        with open(tmp_path / "results.csv", newline="") as fh:
            assert all(float(r["coverage"]) in (0.0, 1.0) for r in csv.DictReader(fh))

    def test_skipped_scenario_fails(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", self._cfg(tmp_path, pi="0.1, 0.9"),
                           "--out", tmp_path)
        assert code != 0 and "skipped" in err

    def test_seed_override_changes_results(self, capsys, tmp_path):
        cfg = self._cfg(tmp_path)
        run(capsys, "simulate", cfg, "--out", tmp_path / "a", "--seed", "1")
        run(capsys, "simulate", cfg, "--out", tmp_path / "b", "--seed", "1", "--threads", "2")
        run(capsys, "simulate", cfg, "--out", tmp_path / "c", "--seed", "2")
        a, b, c = ((tmp_path / d / "results.csv").read_text() for d in "abc")
        assert a == b != c


class TestOracle:
    def test_rg(self, capsys):
        code, out, _ = run(capsys, "oracle", "rg", "--n", "100000", "--format", "json")
        report = json.loads(out)
        assert code == 0 and report["max_rel_discrepancy"] < 1e-4

    def test_srgm_intercept_matches_rg_path(self, capsys):
        code, out, _ = run(capsys, "oracle", "srgm", "--design", "intercept", "--n", "20000",
                           "--format", "json")
        r = json.loads(out)["reports"][0]
        assert code == 0
        assert r["analytic"] == pytest.approx(r["reference"], rel=1e-8)

    def test_singular_design(self, capsys):
        code, _, err = run(capsys, "oracle", "srgm", "--design", "singular", "--n", "20000")
        assert code == 3 and "rank" in err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "seroprev", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("seroprev ")
