"""Direct checks of the conic SDR: closed forms, feasibility residuals, envelope behavior."""

import numpy as np
import pytest

from conftest import desk_scenes
from sparse_wideband.conic import SolverError, group_envelope, solve_group_sdr
from sparse_wideband.oracle import per_bin_max_sinr
from sparse_wideband.scenario import analytic_bin_correlations, restrict, SelectionMask


def _desk(i=0):
    return analytic_bin_correlations(desk_scenes(count=i + 1)[i])


def _solve(bc, U, mu, budget=None):
    n = bc.size
    return solve_group_sdr(list(bc.R), list(bc.Rs), np.arange(n), n, U, mu, budget=budget)


def _mvdr_objectives(bc):
    g = np.array([per_bin_max_sinr(bc.R[l], bc.Rs[l], bc.steering[l])[0] for l in range(bc.bin_count)])
    # min Tr(R W) s.t. Tr(Rs W) >= 1 equals 1 / lambda_max(R^-1 Rs) = (1 + g) / g
    return (1 + g) / g


class TestClosedForms:
    def test_single_bin_equals_capon(self):
        bc = _desk(0)
        one = restrict(bc, SelectionMask.full(8))
        R, Rs = one.R[:1], one.Rs[:1]
        sol = solve_group_sdr(list(R), list(Rs), np.arange(8), 8, np.ones((8, 8)), 0.0)
        expected = _mvdr_objectives(bc)[0]
        assert sol.objective == pytest.approx(expected, rel=1e-6)
        # the optimum is rank one along R^-1 a
        lam, vec = np.linalg.eigh(sol.W[0])
        assert lam[-2] < 1e-5 * lam[-1]
        v = np.linalg.solve(R[0], bc.steering[0])
        v /= np.linalg.norm(v)
        assert abs(np.vdot(v, vec[:, -1])) == pytest.approx(1.0, abs=1e-6)

    def test_summed_constraint_picks_best_bin(self):
        bc = _desk(1)
        sol = _solve(bc, np.ones((8, 8)), 0.0)
        # degenerate face-optimal problem: the solver stops near, not at, the face
        assert sol.objective == pytest.approx(_mvdr_objectives(bc).min(), rel=1e-5)

    def test_per_bin_budget_gives_combined_capon(self):
        bc = _desk(2)
        c = np.real(np.trace(bc.Rs, axis1=1, axis2=2))
        c = c / c.sum()
        sol = _solve(bc, np.ones((8, 8)), 0.0, budget=c)
        assert sol.objective == pytest.approx(float(np.sum(c * _mvdr_objectives(bc))), rel=1e-6)


class TestResiduals:
    @pytest.fixture(scope="class")
    @staticmethod
    def penalized():
        bc = _desk(3)
        rng = np.random.default_rng(0)
        U = rng.uniform(0.5, 2.0, (8, 8))
        U = 0.5 * (U + U.T)
        return bc, U, _solve(bc, U, 0.3)

    def test_signal_constraint(self, penalized):
        bc, _, sol = penalized
        total = sum(np.real(np.trace(Rs @ W)) for Rs, W in zip(bc.Rs, sol.W))
        assert total >= 1 - 1e-6

    def test_psd(self, penalized):
        _, _, sol = penalized
        for W in sol.W:
            np.testing.assert_allclose(W, W.conj().T, atol=1e-12)
            assert np.linalg.eigvalsh(W).min() >= -1e-7 * np.real(np.trace(W))

    def test_envelope_dominates(self, penalized):
        _, _, sol = penalized
        for W in sol.W:
            assert np.min(sol.envelope - np.abs(W)) >= -1e-7

    def test_envelope_is_tight(self, penalized):
        _, _, sol = penalized
        env = group_envelope(sol.W, np.arange(8), 8)
        np.testing.assert_allclose(sol.envelope, env, atol=1e-5 * sol.envelope.max())

    def test_objective_decomposition(self, penalized):
        bc, U, sol = penalized
        data = sum(np.real(np.trace(R @ W)) for R, W in zip(bc.R, sol.W))
        assert sol.data_term == pytest.approx(data, rel=1e-6)
        assert sol.penalty_term == pytest.approx(0.3 * np.sum(U * sol.envelope), rel=1e-5)
        assert sol.objective == pytest.approx(sol.data_term + sol.penalty_term, rel=1e-9)


def test_relaxation_bounds_rank_one_solutions():
    bc = _desk(4)
    sol = _solve(bc, np.ones((8, 8)), 0.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = [rng.standard_normal(8) + 1j * rng.standard_normal(8) for _ in range(bc.bin_count)]
        s = sum(np.real(np.vdot(x, Rs @ x)) for x, Rs in zip(w, bc.Rs))
        obj = sum(np.real(np.vdot(x, R @ x)) for x, R in zip(w, bc.R)) / s
        assert sol.objective <= obj * (1 + 1e-7)


def test_reduced_support_objective_not_lower():
    bc = _desk(5)
    full = _solve(bc, np.ones((8, 8)), 0.0)
    m = SelectionMask.from_indices(8, [0, 2, 5, 7])
    sub = restrict(bc, m)
    red = solve_group_sdr(list(sub.R), list(sub.Rs), np.arange(4), 4, np.ones((4, 4)), 0.0)
    assert red.objective >= full.objective * (1 - 1e-7)


def test_grouped_rows_envelope():
    # two groups of two rows each: envelope is the max modulus over each 2x2 block
    rng = np.random.default_rng(3)
    X = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    W = X @ X.conj().T
    env = group_envelope([W], np.array([0, 0, 1, 1]), 2)
    assert env[0, 1] == pytest.approx(np.abs(W[:2, 2:]).max())
    assert env[1, 1] == pytest.approx(np.abs(W[2:, 2:]).max())


def test_input_validation():
    bc = _desk(0)
    with pytest.raises((ValueError, SolverError)):
        solve_group_sdr(list(bc.R), list(bc.Rs), np.arange(8)[::-1], 8, np.ones((8, 8)), 0.1)
