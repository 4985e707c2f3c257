"""
Tests for configuration loading, validation and run directories.
"""

import json

import pandas as pd
import pytest
from omegaconf import OmegaConf

from shiftkrylov.report import SolveReport, SystemReport
from shiftkrylov.utils.config import (
    ConfigurationError,
    _load_cfg,
    load_cfg,
    parse_shift,
    parse_shifts,
    prep_cfg,
    save_run,
)


@pytest.fixture
def cfg(tmp_path):
    cfg = _load_cfg(use_cli_args=False)
    cfg.out_dir = str(tmp_path)
    cfg.problem.synthetic = "6"
    return cfg


class TestParseShift:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("0.5", 0.5),
            ("1+2i", 1 + 2j),
            ("-3i", -3j),
            ("i", 1j),
            ("1-i", 1 - 1j),
            ("1e-3", 1e-3),
            (" 2 + 0.5j ", 2 + 0.5j),
            (0.25, 0.25),
        ],
    )
    def test_valid(self, text, expected):
        assert parse_shift(text) == expected

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            parse_shift("half")

    def test_comma_list(self):
        assert parse_shifts("0.1, 1+2i,") == [0.1, 1 + 2j]


class TestPrepCfg:
    """Validation and run naming."""

    def test_defaults_validate(self, cfg):
        cfg = prep_cfg(cfg, make_dirs=False)
        assert cfg.solver.method == "srgmres"
        assert cfg.exp_name

    def test_string_shifts(self, cfg):
        cfg.shifts = "0.1,0.2+1i"
        cfg = prep_cfg(cfg, make_dirs=False)
        assert list(cfg.shifts) == ["0.1", "0.2+1i"]

    def test_matrix_and_synthetic(self, cfg):
        cfg.problem.matrix = "a.mtx"
        with pytest.raises(ConfigurationError):
            prep_cfg(cfg, make_dirs=False)

    @pytest.mark.parametrize(
        "key,value",
        [
            ("solver.method", "cg"),
            ("solver.eps", 0.0),
            ("solver.m", 0),
            ("solver.k", -1),
            ("solver.shift_convention", "sideways"),
            ("precond.kind", "jacobi"),
            ("sweep.mode", "random"),
            ("timing.repeats", 0),
        ],
    )
    def test_invalid_values(self, cfg, key, value):
        OmegaConf.update(cfg, key, value)
        with pytest.raises(ConfigurationError):
            prep_cfg(cfg, make_dirs=False)

    def test_duplicate_shifts(self, cfg):
        cfg.shifts = ["0.1", "0.10", "1"]
        with pytest.raises(ConfigurationError):
            prep_cfg(cfg, make_dirs=False)

    def test_run_directories_are_indexed(self, tmp_path):
        first = load_cfg(overrides=[f"out_dir={tmp_path}", "problem.synthetic=6", "exp_name=a"])
        assert first.exp_name == "0-a"
        save_run(first)
        second = load_cfg(overrides=[f"out_dir={tmp_path}", "problem.synthetic=6", "exp_name=b"])
        assert second.exp_name == "1-b"
        assert second.out_dir == (tmp_path / "1-b").resolve()


class TestSaveRun:
    """Files written to the run directory."""

    @pytest.fixture
    def ready(self, cfg):
        return prep_cfg(cfg, make_dirs=True)

    def test_report(self, ready):
        report = SolveReport(method="sgmres", systems=[SystemReport(shift=0.5j, r0_norm=2.0)])
        path = save_run(ready, report=report)
        assert path.name == "report.json"
        assert json.loads(path.read_text())["systems"][0]["shift"] == [0.0, 0.5]
        saved = OmegaConf.load(path.parent / "config.yaml")
        assert saved.problem.synthetic == "6"

    def test_table(self, ready):
        path = save_run(ready, table=pd.DataFrame({"m": [10], "relres": [1 / 3]}), name="sweep")
        assert path.name == "sweep.csv"
        assert path.read_text().splitlines()[1] == "10,0.33333333333333331"

    def test_explicit_out(self, ready, tmp_path):
        ready.out = str(tmp_path / "elsewhere.json")
        path = save_run(ready, report=SolveReport(method="srgmres"))
        assert path == tmp_path / "elsewhere.json"
        assert path.exists()
