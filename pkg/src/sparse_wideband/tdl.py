"""
Tapped-delay-line wideband beamformer: L taps per sensor, stacked dimension N*L.

The stacked steering vector is ``a_sp(theta, l) kron a_t(l)`` (sensor-major, so
the taps of sensor k occupy rows k*L .. k*L+L-1). The temporal part uses the
digital frequency of DFT bin l, ``2*pi*l/L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as la

from .designer import (
    DesignError,
    DesignResult,
    GroupSdrProblem,
    SdrSettings,
    principal,
    select_sensors,
)
from .oracle import DEFAULT_BUDGET, EnumerationBudgetError, to_db
from .scenario import MaskLike, Scenario, SelectionMask, as_mask, steering_matrix

DEFAULT_MAX_REAL_DIM = 96


def temporal_steering(l: int, n_taps: int) -> np.ndarray:
    """Unit-norm tap response of DFT bin ``l``.

    The unit norm keeps the per-bin signal-to-noise ratios of the per-bin model:
    a bin of power ``sigma^2`` spread over L taps against tap noise of the same
    per-bin level. The bin vectors are mutually orthogonal.
    """
    omega = 2.0 * np.pi * l / n_taps
    return np.exp(-1j * omega * np.arange(n_taps)) / np.sqrt(n_taps)


def stacked_steering(doa_deg: float, scenario: Scenario) -> np.ndarray:
    """Stacked steering vectors of every bin, shape (L, N*L)."""
    L = scenario.bin_count
    a_sp = steering_matrix(doa_deg, scenario.geometry, scenario.band)
    return np.stack([np.kron(a_sp[l], temporal_steering(l, L)) for l in range(L)])


@dataclass(frozen=True, eq=False)
class StackedCorrelations:
    R: np.ndarray
    Rs: np.ndarray
    n_sensors: int
    n_taps: int
    desired_steering: np.ndarray  # (L, N*L)
    desired_power: np.ndarray  # (L,)

    @property
    def R_in(self) -> np.ndarray:
        return self.R - self.Rs

    @property
    def groups(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_sensors), self.n_taps)

    def rows(self, mask: MaskLike) -> np.ndarray:
        m = as_mask(mask)
        idx = np.flatnonzero(m.bits)
        return (idx[:, None] * self.n_taps + np.arange(self.n_taps)[None, :]).reshape(-1)

    def restrict(self, mask: MaskLike) -> "StackedCorrelations":
        m = as_mask(mask)
        if m.cardinality < 1:
            raise ValueError("cannot restrict to an empty mask")
        r = self.rows(m)
        return StackedCorrelations(
            self.R[np.ix_(r, r)], self.Rs[np.ix_(r, r)], m.cardinality, self.n_taps,
            self.desired_steering[:, r], self.desired_power,
        )


def build_stacked_correlations(scenario: Scenario) -> StackedCorrelations:
    n, L = scenario.n_positions, scenario.bin_count
    dim = n * L
    R = scenario.noise_power * np.eye(dim, dtype=complex)
    Rs = np.zeros((dim, dim), dtype=complex)
    a_des = None
    p_des = None
    for src in scenario.sources:
        abar = stacked_steering(src.doa_deg, scenario)
        p = src.bin_powers(scenario.band, scenario.noise_power)
        term = np.einsum("l,li,lj->ij", p, abar, abar.conj())
        R += term
        if src is scenario.desired:
            Rs += term
            a_des, p_des = abar, p
    return StackedCorrelations(R, Rs, n, L, a_des, p_des)


@dataclass
class TdlEvaluation:
    mask: SelectionMask
    sinr: float
    weights: np.ndarray

    @property
    def sinr_db(self) -> float:
        return float(to_db(self.sinr))


def tdl_subset_sinr(stacked: StackedCorrelations, mask: MaskLike) -> TdlEvaluation:
    """Largest generalized eigenvalue of (Rs, R_in) on the mask's tap rows."""
    m = as_mask(mask)
    sub = stacked.restrict(m)
    lam, vec = la.eigh(sub.Rs, sub.R_in, subset_by_index=[sub.R.shape[0] - 1] * 2)
    return TdlEvaluation(m, float(lam[-1]), vec[:, -1])


def _batch_tdl_sinr(stacked: StackedCorrelations, subsets: np.ndarray) -> np.ndarray:
    # Rs = A D A^H has rank <= L: lambda_max(R_in^-1 Rs) = lambda_max(D^1/2 A^H R_in^-1 A D^1/2)
    L = stacked.n_taps
    rows = (subsets[:, :, None] * L + np.arange(L)[None, None, :]).reshape(len(subsets), -1)
    R_in = stacked.R_in[rows[:, :, None], rows[:, None, :]]
    A = np.swapaxes(stacked.desired_steering[:, rows], 0, 1)  # (C, L, PL)
    A = np.swapaxes(A, 1, 2) * np.sqrt(stacked.desired_power)[None, None, :]  # (C, PL, L)
    X = np.linalg.solve(R_in, A)
    G = np.einsum("cpl,cpm->clm", A.conj(), X)
    G = 0.5 * (G + np.conj(np.swapaxes(G, 1, 2)))
    return np.linalg.eigvalsh(G)[:, -1]


@dataclass
class TdlSearchResult:
    mask: SelectionMask
    evaluation: TdlEvaluation
    visited_count: int
    objective: str


def tdl_exhaustive(
    stacked: StackedCorrelations,
    P: int,
    objective: str = "best",
    budget: int = DEFAULT_BUDGET,
    chunk_size: int = 512,
) -> TdlSearchResult:
    import itertools

    if objective not in ("best", "worst"):
        raise ValueError(f"objective must be 'best' or 'worst', got {objective!r}")
    n = stacked.n_sensors
    if not 1 <= P <= n:
        raise ValueError(f"P must lie in [1, {n}], got {P}")
    total = math.comb(n, P)
    if total > budget:
        raise EnumerationBudgetError(
            f"C({n},{P}) = {total} subsets exceeds the enumeration budget {budget}"
        )
    subsets = np.array(list(itertools.combinations(range(n), P)), dtype=np.intp).reshape(total, P)
    sinr = np.concatenate(
        [_batch_tdl_sinr(stacked, subsets[i : i + chunk_size]) for i in range(0, total, chunk_size)]
    )
    idx = int(np.argmax(sinr) if objective == "best" else np.argmin(sinr))
    mask = SelectionMask.from_indices(n, subsets[idx])
    return TdlSearchResult(mask, tdl_subset_sinr(stacked, mask), total, objective)


def _tdl_problem(stacked: StackedCorrelations, settings: SdrSettings) -> GroupSdrProblem:
    return GroupSdrProblem([stacked.R], [stacked.Rs], stacked.groups, stacked.n_sensors, settings)


def tdl_design(
    scenario: Union[Scenario, StackedCorrelations],
    P: int,
    settings: Optional[SdrSettings] = None,
    max_real_dim: int = DEFAULT_MAX_REAL_DIM,
) -> DesignResult:
    """Group-sparse SDR selection over the stacked tap space.

    ``max_real_dim`` caps the real-embedded PSD dimension 2*N*L; the dense
    interior-point Hessian of that cone grows with the fourth power of it.
    """
    settings = settings or SdrSettings()
    stacked = build_stacked_correlations(scenario) if isinstance(scenario, Scenario) else scenario
    real_dim = 2 * stacked.R.shape[0]
    if real_dim > max_real_dim:
        raise DesignError(
            f"delay-line SDR of real dimension {real_dim} exceeds the size guard {max_real_dim}"
        )
    problem = _tdl_problem(stacked, settings)
    mask, diag = select_sensors(problem, P)
    reduced = stacked.restrict(mask)
    refit = _tdl_problem(reduced, settings).solve(
        np.ones((reduced.n_sensors,) * 2), 0.0, stage="refit"
    )
    lam, v, ratio = principal(refit.W[0])
    w = np.sqrt(max(lam, 0.0)) * v
    w = w / np.sqrt(np.real(np.vdot(w, reduced.Rs @ w)))
    refit_sinr = float(np.real(np.vdot(w, reduced.Rs @ w)) / np.real(np.vdot(w, reduced.R_in @ w)))
    oracle = tdl_subset_sinr(stacked, mask)
    diag["rank_ratios"] = [ratio]
    diag["solver_log"] = problem.log
    return DesignResult(
        mask=mask,
        weights=w.reshape(reduced.n_sensors, reduced.n_taps),
        sinr_db=oracle.sinr_db,
        refit_sinr_db=float(to_db(refit_sinr)),
        diagnostics=diag,
    )
