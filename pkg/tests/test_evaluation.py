import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import desk_scenes
from sparse_wideband.designer import design
from sparse_wideband.evaluation import (
    GAIN_FLOOR_DB,
    beampattern,
    default_theta_grid,
    jammer_attenuation,
    sinr_report,
    sweep,
    sweep_flags,
    write_beampattern_csv,
    write_sweep_csv,
)
from sparse_wideband.oracle import exhaustive_search, subset_output_sinr
from sparse_wideband.scenario import ScenarioError, SelectionMask, analytic_bin_correlations
from sparse_wideband.tdl import build_stacked_correlations, stacked_steering, tdl_design


def _scene(i=0):
    return desk_scenes(count=i + 1)[i]


class TestBeampattern:
    def test_default_grid(self):
        g = default_theta_grid()
        assert g[0] == 0.0 and g[-1] == 180.0 and g.size == 721

    def test_single_sensor_is_omnidirectional(self):
        sc = _scene()
        grid = beampattern(np.ones((4, 1)), SelectionMask.from_indices(8, [3]), sc)
        np.testing.assert_allclose(grid.gain_db, 0.0, atol=1e-12)

    def test_normalized_and_floored(self):
        sc = _scene()
        ev = subset_output_sinr(analytic_bin_correlations(sc), SelectionMask.from_indices(8, [0, 2, 5, 7]))
        grid = beampattern(ev.weights, [1, 0, 1, 0, 0, 1, 0, 1], sc)
        assert grid.gain_db.shape == (4, 721)
        assert grid.gain_db.max() == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grid.gain_db)) and grid.gain_db.min() >= GAIN_FLOOR_DB

    def test_invariant_to_complex_scaling(self):
        sc = _scene(1)
        m = SelectionMask.from_indices(8, [1, 2, 4, 6])
        w = subset_output_sinr(analytic_bin_correlations(sc), m).weights
        a = beampattern(w, m, sc)
        b = beampattern(w * (3.0 - 4.0j), m, sc)
        np.testing.assert_allclose(a.gain_db, b.gain_db, atol=1e-9)

    def test_mirror_reflects_pattern(self):
        sc = _scene(2)
        m = SelectionMask.from_indices(8, [0, 1, 3, 6])
        w = subset_output_sinr(analytic_bin_correlations(sc), m).weights
        a = beampattern(w, m, sc)
        b = beampattern(w.conj(), m, sc.mirrored())
        np.testing.assert_allclose(b.gain_db, a.gain_db[:, ::-1], atol=1e-9)

    def test_delay_line_pattern(self):
        from dataclasses import replace
        from sparse_wideband.scenario import ArrayGeometry

        sc = _scene()
        sc = replace(sc, geometry=ArrayGeometry(4), band=replace(sc.band, bin_count=2))
        res = tdl_design(build_stacked_correlations(sc), 2)
        theta = [20.0, 75.5, 140.0]
        grid = beampattern(res.weights, res.mask, sc, theta, taps=True)
        rows = build_stacked_correlations(sc).rows(res.mask)
        w = res.weights.reshape(-1)
        direct = np.array([[abs(np.vdot(w, stacked_steering(t, sc)[l][rows])) for t in theta]
                           for l in range(2)])
        expected = np.maximum(20 * np.log10(direct / direct.max()), GAIN_FLOOR_DB)
        np.testing.assert_allclose(grid.gain_db, expected, atol=1e-9)

    def test_errors(self):
        sc = _scene()
        with pytest.raises(ValueError):
            beampattern(np.ones((4, 1)), SelectionMask.from_indices(8, [0]), sc, [])
        with pytest.raises(ValueError):
            beampattern(np.ones((4, 2)), SelectionMask.from_indices(8, [0]), sc)

    def test_gain_at_requires_grid_angle(self):
        sc = _scene()
        grid = beampattern(np.ones((4, 1)), SelectionMask.from_indices(8, [0]), sc)
        assert grid.gain_at(45.0).shape == (4,)
        with pytest.raises(ValueError):
            grid.gain_at(45.1)

    def test_csv(self, tmp_path):
        sc = _scene()
        grid = beampattern(np.ones((4, 1)), SelectionMask.from_indices(8, [0]), sc, [0.0, 90.0])
        path = tmp_path / "bp.csv"
        write_beampattern_csv(grid, path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["theta", "bin_index", "frequency", "gain_db"]
        assert rows[1] == ["0", "0", "0.5", "0"]
        assert len(rows) == 1 + 4 * 2


class TestReport:
    def test_best_mask_reproduces_oracle_exactly(self):
        bc = analytic_bin_correlations(_scene(3))
        best = exhaustive_search(bc, 4)
        rep = sinr_report(best.mask, bc)
        assert rep.sinr_db == best.evaluation.sinr_db
        assert rep.gamma_db == best.evaluation.gamma_db.tolist()

    def test_design_report_and_discrepancy_flag(self):
        from dataclasses import replace

        sc = _scene(4)
        bc = analytic_bin_correlations(sc)
        res = design(bc, 4)
        rep = sinr_report(res, bc, sc)
        assert rep.discrepancy_flag is False
        assert set(rep.jammer_attenuation_db) == {j.doa_deg for j in sc.interferers}
        rng = np.random.default_rng(0)
        bad = replace(res, weights=res.weights + 0.3 * rng.standard_normal(res.weights.shape))
        assert sinr_report(bad, bc).discrepancy_flag is True

    @given(st.lists(st.booleans(), min_size=8, max_size=8).filter(lambda b: sum(b) >= 1))
    @settings(max_examples=40, deadline=None)
    def test_all_bins_above_unity_implies_combined_above_unity(self, bits):
        bc = analytic_bin_correlations(_scene(5))
        rep = sinr_report(SelectionMask(bits), bc)
        if min(rep.gamma_db) >= 0.0:
            assert rep.sinr_db >= -1e-12
        assert min(rep.gamma_db) - 1e-9 <= rep.sinr_db <= max(rep.gamma_db) + 1e-9

    def test_attenuation_relative_to_look_direction(self):
        sc = _scene(6)
        m = SelectionMask.full(8)
        w = subset_output_sinr(analytic_bin_correlations(sc), m).weights
        att = jammer_attenuation(w, m, sc)
        for v in att.values():
            assert len(v) == 4 and max(v) < 0.0


class TestSweep:
    COLS = ("sinr_dft_sdr", "sinr_dft_enum", "sinr_tdl_enum")

    def test_zero_steps_equals_base_report(self):
        sc = _scene(7)
        rows = sweep(sc, 5.0, 0, 4, columns=self.COLS)
        assert len(rows) == 1 and rows[0].shift_deg == 0
        bc = analytic_bin_correlations(sc)
        assert rows[0].sinr_dft_enum == exhaustive_search(bc, 4).evaluation.sinr_db
        assert rows[0].sinr_dft_sdr == design(bc, 4).sinr_db
        assert math.isnan(rows[0].sinr_tdl_sdr)

    def test_rows_independent_of_order(self):
        sc = _scene(8)
        a = sweep(sc, -2.0, 2, 4, columns=self.COLS, threads=1)
        b = sweep(sc, -2.0, 2, 4, columns=self.COLS[::-1], threads=3)
        for ra, rb in zip(a, b):
            assert ra.to_dict() == rb.to_dict()
        assert [r.shift_deg for r in a] == [0.0, -2.0, -4.0]
        assert sweep_flags(a)["dft_enum_ge_sdr"]

    def test_cell_failure_is_recorded(self):
        sc = _scene(9)
        rows = sweep(sc, 1.0, 1, 4, columns=("sinr_tdl_sdr", "sinr_dft_enum"), tdl_max_real_dim=10)
        for r in rows:
            assert math.isnan(r.sinr_tdl_sdr) and "size guard" in r.errors["sinr_tdl_sdr"]
            assert np.isfinite(r.sinr_dft_enum)

    def test_leaving_visible_region_rejected(self):
        with pytest.raises(ScenarioError):
            sweep(_scene(0), 60.0, 3, 4, columns=("sinr_dft_enum",))

    def test_csv(self, tmp_path):
        rows = sweep(_scene(1), 1.0, 1, 4, columns=("sinr_dft_enum",))
        path = tmp_path / "s.csv"
        write_sweep_csv(rows, path)
        lines = list(csv.reader(path.open()))
        assert lines[0] == ["shift_deg", "desired_doa", "sinr_dft_sdr", "sinr_dft_enum",
                            "sinr_tdl_sdr", "sinr_tdl_enum"]
        assert lines[1][2] == "nan" and lines[1][3] == f"{rows[0].sinr_dft_enum:.6g}"
