import json
from fractions import Fraction

import pytest

from cli import run
from errors import UnsupportedCertificate
from line_cutting import BoxFamily
from tools.certificates import emit_plot_data, read_plot_data, verify_certificate

UNIFORM = {"kx": 1, "ky": 1, "values": [1]}


@pytest.fixture
def diag3_file(write_json, diag3):
    return write_json("diag3.json", diag3.to_payload())


def run_json(capsys, argv):
    code = run(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


class TestKkm:
    def test_canonical_quota_point(self, capsys):
        code, cert = run_json(capsys, ["kkm", "--n", "2", "--m", "3", "--quota", "1,2"])
        assert code == 0
        assert cert["outcome"] == "solved"
        assert cert["solution"]["point"] == [["1/3", "2/3"], ["1/3", "1/3", "1/3"]]
        assert cert["solution"]["sigma"] == [0, 1, 1]
        assert cert["verification"] and all(cert["verification"].values())

    def test_quota_shape_mismatch(self, capsys):
        code, cert = run_json(capsys, ["kkm", "--n", "2", "--m", "3", "--quota", "1,1"])
        assert code == 2
        assert cert is None

    def test_missing_flags(self, capsys):
        code, cert = run_json(capsys, ["kkm", "--n", "2"])
        assert code == 2
        assert cert is None

    def test_csv_is_refused(self, capsys):
        code, _ = run_json(capsys, ["kkm", "--n", "2", "--m", "2", "--quota", "1,1", "--format", "csv"])
        assert code == 2

    def test_unknown_command(self, capsys):
        assert run(["nope"]) == 2

    def test_out_file_round_trip(self, capsys, tmp_path):
        target = tmp_path / "certs" / "kkm.json"
        code = run(["kkm", "--n", "2", "--m", "2", "--quota", "1,1", "--out", str(target)])
        assert code == 0
        assert capsys.readouterr().out == ""
        cert = json.loads(target.read_text(encoding="utf-8"))
        assert all(verify_certificate(cert).values())

    def test_tampered_certificate_fails(self, capsys, tmp_path):
        target = tmp_path / "kkm.json"
        run(["kkm", "--n", "2", "--m", "3", "--quota", "1,2", "--out", str(target)])
        cert = json.loads(target.read_text(encoding="utf-8"))
        cert["solution"]["sigma"] = [0, 0, 1]
        assert not verify_certificate(cert)["quota_exact"]
        del cert["solution"]["point"]
        assert verify_certificate(cert) == {"certificate_well_formed": False}

    def test_plot_data_needs_geometry(self, capsys, tmp_path):
        target = tmp_path / "kkm.json"
        run(["kkm", "--n", "2", "--m", "2", "--quota", "1,1", "--out", str(target)])
        with pytest.raises(UnsupportedCertificate):
            emit_plot_data(json.loads(target.read_text(encoding="utf-8")))


class TestOtherSolvers:
    def test_kkm_r(self, capsys):
        code, cert = run_json(capsys, ["kkm-r", "--n", "3", "--r", "3"])
        assert code == 0
        assert len(cert["solution"]["matching"]) >= 2
        assert all(cert["verification"].values())

    def test_colored_kkm(self, capsys):
        code, cert = run_json(capsys, ["colored-kkm", "--n", "2", "--m", "2", "--quota", "1,1"])
        assert code == 0
        assert all(cert["verification"].values())

    def test_colored_kkm_rejects_tables(self, capsys, write_json):
        path = write_json("table.json", {"n": 2, "m": 2})
        code, _ = run_json(capsys, ["colored-kkm", "--n", "2", "--m", "2", "--quota", "1,1", "--scores", path])
        assert code == 2

    def test_oracle(self, capsys):
        code, cert = run_json(capsys, ["oracle", "--n", "2", "--m", "2", "--quota", "1,1", "--resolution", "4"])
        assert code == 0
        assert cert["solution"]["min_score"] == 0.25


class TestSquarePartition:
    def test_high_threshold(self, capsys, write_json):
        density = write_json("density.json", UNIFORM)
        code, cert = run_json(
            capsys,
            ["square-partition", "--n", "2", "--m", "2", "--c", "0.3", "--quota", "1,1", "--density", density],
        )
        assert code == 0
        assert cert["outcome"] == "all_below"
        assert all(cert["verification"].values())

    def test_malformed_density(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        code, cert = run_json(
            capsys, ["square-partition", "--n", "2", "--m", "2", "--c", "0.3", "--density", str(path)]
        )
        assert code == 2
        assert cert is None

    def test_negative_density(self, capsys, write_json):
        density = write_json("density.json", {"kx": 1, "ky": 1, "values": [-1]})
        code, cert = run_json(
            capsys, ["square-partition", "--n", "2", "--m", "2", "--c", "0.3", "--density", density]
        )
        assert code == 2
        assert cert is None

    def test_csv_rows(self, capsys):
        code = run(
            ["square-partition", "--n", "2", "--m", "4", "--c", "0.125", "--quota", "2,2", "--format", "csv"]
        )
        assert code == 1
        rows = read_plot_data(capsys.readouterr().out)
        assert [r["kind"] for r in rows].count("x_cut") == 1
        assert [r["kind"] for r in rows].count("y_cut") == 3
        assert all(0 < r["values"][0] < 1 for r in rows)

    def test_csv_positions_match_certificate(self, capsys):
        argv = ["square-partition", "--n", "2", "--m", "4", "--c", "0.125", "--quota", "2,2"]
        run(argv + ["--format", "csv"])
        rows = read_plot_data(capsys.readouterr().out)
        _, cert = run_json(capsys, argv)
        outcome = cert["solution"]["outcomes"][0]
        for kind, cuts in (("x_cut", outcome["x_cuts"]), ("y_cut", outcome["y_cuts"])):
            values = [r["values"][0] for r in rows if r["kind"] == kind]
            assert values == [float(Fraction(c)) for c in cuts[1:-1]]
        assert read_plot_data(emit_plot_data(cert)) == rows


class TestFamilies:
    def test_cut_lines_witness(self, capsys, diag3_file):
        code, cert = run_json(capsys, ["cut-lines", "--n", "1", "--m", "1", "--family", diag3_file])
        assert code == 1
        assert cert["outcome"] == "none_exists"
        assert set(cert["solution"]["witnesses"]) == {"1,1"}
        assert all(cert["verification"].values())

    def test_cut_lines_cut(self, capsys, diag3_file):
        code, cert = run_json(capsys, ["cut-lines", "--n", "1", "--m", "2", "--family", diag3_file])
        assert code == 0
        assert cert["solution"]["cut"] == {"vertical": [0.5], "horizontal": [2.5, 4.5]}

    def test_cut_lines_csv(self, capsys, diag3_file):
        code = run(["cut-lines", "--n", "1", "--m", "2", "--family", diag3_file, "--format", "csv"])
        assert code == 0
        kinds = [r["kind"] for r in read_plot_data(capsys.readouterr().out)]
        assert kinds.count("box") == 3
        assert kinds.count("vertical") == 1
        assert kinds.count("horizontal") == 2

    def test_malformed_family(self, capsys, write_json):
        path = write_json("family.json", {"sets": [{"box": [0, 1, 0]}]})
        code, cert = run_json(capsys, ["cut-lines", "--n", "1", "--m", "1", "--family", path])
        assert code == 2
        assert cert is None

    def test_witness(self, capsys, diag3_file):
        code, cert = run_json(
            capsys, ["witness", "--n", "1", "--m", "2", "--quota", "1,2", "--family", diag3_file]
        )
        assert code == 0
        assert cert["solution"]["witnesses"]["1,2"]["members"] == [0, 1, 2]

    def test_helly_premise_fails(self, capsys, diag3_file):
        code, cert = run_json(capsys, ["helly-check", "--n", "1", "--m", "1", "--family", diag3_file])
        assert code == 1
        assert cert["solution"]["violating"] == [0, 1]
        assert cert["solution"]["theorem_respected"]

    def test_helly_budgets_out_of_order(self, capsys, diag3_file):
        code, cert = run_json(capsys, ["helly-check", "--n", "2", "--m", "1", "--family", diag3_file])
        assert code == 2
        assert cert is None

    def test_family_payload_survives_certificate(self, capsys, diag3_file, diag3):
        _, cert = run_json(capsys, ["cut-lines", "--n", "1", "--m", "2", "--family", diag3_file])
        assert BoxFamily.from_payload(cert["problem"]["family"]) == diag3
