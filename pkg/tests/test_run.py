"""
Tests for the command line interface.
"""

import json
from unittest import mock

import pytest

from shiftkrylov.run import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, build_parser, main


class TestParser:
    def test_subcommands(self):
        args = build_parser().parse_args(["solve", "--m", "20", "--shifts", "0.1,1+2i", "seed=3"])
        assert args.command == "solve"
        assert args.m == 20
        assert args.overrides == ["seed=3"]

    def test_unknown_method(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["solve", "--method", "cg"])


class TestMain:
    """End-to-end runs on small synthetic problems."""

    def test_solve(self, tmp_path):
        out = tmp_path / "report.json"
        code = main(
            ["solve", "--synthetic", "6,2,0", "--shifts", "0.01,0.5+0.5i", "--m", "10",
             "--k", "3", "--repeats", "1", "--verify", "--out", str(out), f"out_dir={tmp_path}"]
        )
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["method"] == "srgmres"
        assert [s["shift"] for s in report["solves"][0]["systems"]] == [[0.01, 0.0], [0.5, 0.5]]

    def test_not_converged(self, tmp_path):
        code = main(
            ["solve", "--synthetic", "10,2,0", "--m", "2", "--max-cycles", "1", "--eps", "1e-14",
             "--method", "sgmres", "--repeats", "1", f"out_dir={tmp_path}"]
        )
        assert code == EXIT_NOT_CONVERGED

    def test_invalid_configuration(self, tmp_path):
        code = main(["solve", "--synthetic", "6", "--eps", "0", f"out_dir={tmp_path}"])
        assert code == EXIT_ERROR

    def test_missing_matrix(self, tmp_path):
        code = main(["solve", "--matrix", str(tmp_path / "absent.mtx"), f"out_dir={tmp_path}"])
        assert code == EXIT_ERROR

    def test_cost(self, tmp_path):
        out = tmp_path / "cost.csv"
        code = main(["cost", "--param", "L", "--values", "1,2", "--out", str(out),
                     f"out_dir={tmp_path}"])
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "param,d_sgmres,d_srgmres"
        assert len(lines) == 3

    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        code = main(
            ["sweep", "--synthetic", "6", "--mode", "m_plus_k", "--out", str(out),
             f"out_dir={tmp_path}", "sweep.m_values=[5,8]", "sweep.m_plus_k=12",
             "sweep.methods=[srgmres]"]
        )
        assert code == EXIT_OK
        assert len(out.read_text().splitlines()) == 3

    def test_diagnose(self, tmp_path):
        out = tmp_path / "diag.csv"
        code = main(["diagnose", "--synthetic", "6", "--m", "5", "--out", str(out),
                     f"out_dir={tmp_path}"])
        assert code == EXIT_OK
        assert out.read_text().startswith("member,base,cycle,system,shift")

    def test_fetch(self, tmp_path):
        with mock.patch("shiftkrylov.run.fetch_qcd", return_value=[]) as fetch:
            code = main(["fetch-qcd", "--names", "conf5_0-4x4-10", "--dest", str(tmp_path),
                         "--kappa-c", "0.2", f"out_dir={tmp_path}"])
        assert code == EXIT_OK
        args = fetch.call_args.args
        assert args[0] == ["conf5_0-4x4-10"]
        assert args[1] == str(tmp_path)
        assert args[3] == 0.2
