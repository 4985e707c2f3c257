"""
Tests for the FLOP cost model.
"""

import math

import pytest

from shiftkrylov.cost_model import (
    CostParams,
    d_sgmres,
    d_srgmres,
    d_srgmres_half,
    is_monotone,
    j_new_model,
    sgmres_from_line_items,
    srgmres_coefficients,
    structure_difference,
    sweep,
    write_sweep,
)


class TestShiftedGmresCost:
    """Closed form and line items of the shifted GMRES overhead."""

    def test_worked_value(self):
        p = CostParams(m=50, L=5, n=10**4)
        assert d_sgmres(p) == pytest.approx(1324433.3333, rel=1e-9)

    @pytest.mark.parametrize("m,L,n", [(50, 5, 10**4), (10, 1, 1), (100, 8, 10**7), (3, 0, 7)])
    def test_line_items_agree(self, m, L, n):
        p = CostParams(m=m, L=L, n=n)
        assert sgmres_from_line_items(p) == pytest.approx(d_sgmres(p), rel=1e-12)


class TestRecycledCost:
    """Closed forms and line items of the recycled overhead."""

    def test_coefficients(self):
        a, b = srgmres_coefficients(CostParams(m=40, k=5, L=5, n=10**4))
        assert a == pytest.approx(1.3e6, rel=0.1)
        assert b == pytest.approx(2.0e6, rel=0.1)

    def test_closed_form_splits_into_coefficients(self):
        p = CostParams(m=40, k=5, L=5, n=10**4)
        a, b = srgmres_coefficients(p)
        steady = d_srgmres(p)
        assert steady == pytest.approx(a, rel=0.1)
        once = d_srgmres(CostParams(m=40, k=5, L=5, n=10**4, j_new=1)) - steady
        assert once == pytest.approx(b, rel=0.1)

    def test_half_recycle_specialization(self):
        """At k = m/2 both closed forms give the same value."""
        general = d_srgmres(CostParams(m=2, k=1, L=1, n=1, j_new=1))
        half = d_srgmres_half(CostParams(m=2, L=1, n=1, j_new=1))
        assert general == pytest.approx(98.1667, abs=1e-3)
        assert half == pytest.approx(general, rel=1e-12)

    @pytest.mark.parametrize("m,k,L,n,j", [(100, 50, 5, 10**7, 300), (40, 20, 3, 5000, 10)])
    def test_half_recycle_specialization_large(self, m, k, L, n, j):
        general = d_srgmres(CostParams(m=m, k=k, L=L, n=n, j_new=j))
        half = d_srgmres_half(CostParams(m=m, L=L, n=n, j_new=j))
        assert half == pytest.approx(general, rel=1e-12)

    @pytest.mark.parametrize("m,L,n", [(50, 5, 10**4), (10, 1, 3), (200, 12, 10**6)])
    def test_structure_difference(self, m, L, n):
        p = CostParams(m=m, k=0, L=L, n=n)
        assert d_srgmres(p) - d_sgmres(p) == pytest.approx(structure_difference(p), rel=1e-9)
        assert structure_difference(p) == (L - 1) * m**2 - L * m + 1 + 4 * L


class TestIterationModel:
    def test_large_cycle_limit(self):
        assert j_new_model(1e6, 1e9) == pytest.approx(100, abs=1)

    def test_short_cycles(self):
        assert j_new_model(1e6, 1) == pytest.approx(1e6 / 10 ** ((4 / 9 + 1 / 9) * 6))


class TestSweep:
    """Parameter sweeps over both cost models."""

    def test_columns_and_monotone_in_L(self):
        df = sweep("L", range(1, 11))
        assert list(df.columns) == ["param", "d_sgmres", "d_srgmres"]
        assert len(df) == 10
        assert is_monotone(df["d_sgmres"])
        assert is_monotone(df["d_srgmres"])

    def test_recycled_costs_more(self):
        df = sweep("m", [20, 40, 80], j_new=math.inf)
        assert (df["d_srgmres"] > df["d_sgmres"]).all()

    def test_unknown_parameter(self):
        with pytest.raises(ValueError):
            sweep("q", [1, 2])

    def test_write(self, tmp_path):
        path = tmp_path / "cost.csv"
        write_sweep(sweep("n", [10**4, 10**5]), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "param,d_sgmres,d_srgmres"
        assert len(lines) == 3


class TestCostParams:
    @pytest.mark.parametrize(
        "kwargs",
        [{"m": 0}, {"m": 5, "n": 0}, {"m": 5, "k": -1}, {"m": 5, "L": -2}, {"m": 5, "j_new": 0}],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            CostParams(**kwargs)
