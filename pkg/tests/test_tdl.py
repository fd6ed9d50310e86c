import math

import numpy as np
import pytest

from conftest import desk_scenes
from sparse_wideband.designer import DesignError, design
from sparse_wideband.oracle import subset_output_sinr
from sparse_wideband.scenario import (
    SelectionMask,
    analytic_bin_correlations,
    random_scenario,
)
from sparse_wideband.tdl import (
    build_stacked_correlations,
    stacked_steering,
    tdl_design,
    tdl_exhaustive,
    tdl_subset_sinr,
    temporal_steering,
)

# Frozen from a full delay-line enumeration of the 18-position scene, 10 sensors.
EXAMPLE1_TDL_BEST_BITS = "111001011110100001"
EXAMPLE1_TDL_BEST_DB = 9.984143318156764


def _small(seed, n=4, L=2):
    return random_scenario(np.random.default_rng(seed), n_positions=n, bin_count=L)


def _narrowband(seed):
    return random_scenario(np.random.default_rng(100 + seed), n_positions=6, bin_count=1)


class TestModel:
    def test_temporal_vectors_orthonormal(self):
        T = np.stack([temporal_steering(l, 6) for l in range(6)])
        np.testing.assert_allclose(T @ T.conj().T, np.eye(6), atol=1e-12)

    def test_sensor_major_layout(self):
        sc = _small(0, n=3, L=4)
        abar = stacked_steering(sc.desired.doa_deg, sc)
        assert abar.shape == (4, 12)
        # taps of sensor k occupy rows k*L .. k*L+L-1
        from sparse_wideband.scenario import steering_matrix
        a = steering_matrix(sc.desired.doa_deg, sc.geometry, sc.band)
        np.testing.assert_allclose(abar[2, 4:8], a[2, 1] * temporal_steering(2, 4))

    def test_desired_rank_at_most_l(self):
        sc = desk_scenes(count=1)[0]
        st = build_stacked_correlations(sc)
        s = np.linalg.svd(st.Rs, compute_uv=False)
        assert np.sum(s > 1e-9 * s[0]) <= sc.bin_count

    def test_groups_and_rows(self):
        st = build_stacked_correlations(_small(1, n=3, L=2))
        np.testing.assert_array_equal(st.groups, [0, 0, 1, 1, 2, 2])
        np.testing.assert_array_equal(st.rows(SelectionMask([1, 0, 1])), [0, 1, 4, 5])

    def test_sinr_is_best_bin_of_per_bin_model(self):
        # orthogonal tap responses decouple the bins: the optimal delay-line
        # filter concentrates on the single best bin
        sc = desk_scenes(count=2)[1]
        st = build_stacked_correlations(sc)
        bc = analytic_bin_correlations(sc)
        for bits in ([1, 1, 0, 0, 1, 1, 0, 0], [0, 1, 1, 1, 0, 1, 0, 1], [1] * 8):
            m = SelectionMask(bits)
            assert tdl_subset_sinr(st, m).sinr == pytest.approx(
                subset_output_sinr(bc, m).gamma.max(), rel=1e-8)


class TestNarrowbandCoincidence:
    @pytest.mark.parametrize("seed", range(3))
    def test_single_tap_matches_per_bin(self, seed):
        sc = _narrowband(seed)
        st = build_stacked_correlations(sc)
        bc = analytic_bin_correlations(sc)
        np.testing.assert_allclose(st.R, bc.R[0], rtol=1e-12)
        np.testing.assert_allclose(st.Rs, bc.Rs[0], rtol=1e-12)
        m = SelectionMask([1, 0, 1, 1, 0, 1])
        assert tdl_subset_sinr(st, m).sinr == pytest.approx(subset_output_sinr(bc, m).sinr, rel=1e-8)


class TestEnumeration:
    def test_batched_matches_direct(self):
        sc = desk_scenes(count=1)[0]
        st = build_stacked_correlations(sc)
        from sparse_wideband.tdl import _batch_tdl_sinr
        subs = np.array([[0, 1, 2, 3], [1, 3, 5, 7], [0, 2, 6, 7]])
        batch = _batch_tdl_sinr(st, subs)
        for s, b in zip(subs, batch):
            assert b == pytest.approx(tdl_subset_sinr(st, SelectionMask.from_indices(8, s)).sinr, rel=1e-9)

    def test_best_dominates_and_count(self):
        st = build_stacked_correlations(desk_scenes(count=1)[0])
        best = tdl_exhaustive(st, 3)
        worst = tdl_exhaustive(st, 3, "worst")
        assert best.visited_count == math.comb(8, 3)
        assert worst.evaluation.sinr <= best.evaluation.sinr
        for s in ([0, 1, 2], [2, 4, 7], [5, 6, 7]):
            assert tdl_subset_sinr(st, SelectionMask.from_indices(8, s)).sinr <= best.evaluation.sinr * (1 + 1e-12)

    def test_example1(self, example1):
        res = tdl_exhaustive(build_stacked_correlations(example1), 10)
        assert res.visited_count == 43758
        assert res.mask.bitstring() == EXAMPLE1_TDL_BEST_BITS
        assert res.evaluation.sinr_db == pytest.approx(EXAMPLE1_TDL_BEST_DB, abs=1e-9)

    def test_bad_arguments(self):
        st = build_stacked_correlations(_small(0))
        with pytest.raises(ValueError):
            tdl_exhaustive(st, 5)
        with pytest.raises(ValueError):
            tdl_exhaustive(st, 2, "median")


class TestDesign:
    def test_small_design(self):
        st = build_stacked_correlations(_small(2))
        res = tdl_design(st, 2)
        assert res.mask.cardinality == 2
        assert res.weights.shape == (2, 2)
        assert res.sinr_db <= tdl_exhaustive(st, 2).evaluation.sinr_db + 1e-9
        assert abs(res.refit_sinr_db - res.sinr_db) <= 0.05

    def test_size_guard(self, example1):
        with pytest.raises(DesignError, match="size guard"):
            tdl_design(example1, 10)

    def test_narrowband_design_matches_per_bin_design(self):
        sc = _narrowband(0)
        a = tdl_design(sc, 3)
        b = design(sc, 3)
        assert a.mask == b.mask
        assert a.sinr_db == pytest.approx(b.sinr_db, rel=1e-8)
