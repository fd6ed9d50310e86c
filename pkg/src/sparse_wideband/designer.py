"""
P-of-N sensor selection for DFT-domain wideband MaxSINR beamforming.

The selection runs the reweighted group-sparse SDR in two phases: a sparsity
loop that sharpens the reweighting matrix at a fixed penalty, then a bisection
on the penalty weight (reweighting frozen) until exactly P sensors survive.
The chosen sensors are refit without penalty to obtain the per-bin weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .conic import ConicSolution, solve_group_sdr
from .oracle import subset_output_sinr, to_db
from .scenario import (
    BinCorrelations,
    Scenario,
    SelectionMask,
    analytic_bin_correlations,
    restrict,
)

log = logging.getLogger(__name__)


class DesignError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdrSettings:
    """Tuning knobs of the reweighted SDR selection.

    ``epsilon`` and ``eta`` are relative to the largest entry of the reweighting
    metric. ``mu_upper=None`` derives the bisection ceiling from the unpenalized
    solve as ``mu_upper_factor * data / Tr(U Wt)``; the sparsity loop runs at
    ``loop_mu_fraction * mu_upper``.
    """

    epsilon: float = 0.05
    eta: float = 1e-3
    max_reweight_iters: int = 20
    mu_lower: float = 0.0
    mu_upper: Optional[float] = None
    mu_upper_factor: float = 10.0
    loop_mu_fraction: float = 0.1
    max_bisection_iters: int = 30
    stable_iters: int = 2
    reweight_mode: str = "eigen"
    init_tilt: float = 0.0
    selection_constraint: str = "sum"
    tol_gap: float = 1e-7
    tol_feas: float = 1e-8
    max_solver_iters: int = 200

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.mu_upper is not None and not self.mu_lower < self.mu_upper:
            raise ValueError("mu_lower must be below mu_upper")
        if self.mu_lower < 0:
            raise ValueError("mu_lower must be nonnegative")
        for name in ("max_reweight_iters", "max_bisection_iters", "stable_iters", "max_solver_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.selection_constraint not in ("sum", "per_bin"):
            raise ValueError(f"unknown selection_constraint {self.selection_constraint!r}")
        if self.reweight_mode not in ("eigen", "envelope"):
            raise ValueError(f"unknown reweight_mode {self.reweight_mode!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SdrIterate:
    W: List[np.ndarray]
    envelope: np.ndarray
    U: np.ndarray
    mu: float
    objective: float
    data_term: float
    penalty_term: float
    group_metric: np.ndarray
    rank_ratios: np.ndarray
    status: str
    solve_time: float = 0.0

    @property
    def bin_count(self) -> int:
        return len(self.W)


def principal(W: np.ndarray):
    """Largest eigenvalue, its unit eigenvector and the lambda_2/lambda_1 ratio."""
    lam, vec = np.linalg.eigh(W)
    l1 = lam[-1]
    ratio = float(lam[-2] / l1) if lam.size > 1 and l1 > 0 else (0.0 if lam.size == 1 else 1.0)
    return float(l1), vec[:, -1], max(ratio, 0.0)


def group_metric(W: Sequence[np.ndarray], groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Bin-averaged squared principal-eigenvector magnitude per sensor group.

    Within a group of several rows (delay-line taps) the largest magnitude counts.
    """
    groups = np.asarray(groups)
    y = np.zeros(n_groups)
    for Wb in W:
        _, v, _ = principal(Wb)
        mag = np.zeros(n_groups)
        np.maximum.at(mag, groups, np.abs(v) ** 2)
        y += mag
    return y / len(W)


class GroupSdrProblem:
    """A fixed set of blocks plus the sensor grouping of their rows."""

    def __init__(self, R, Rs, groups, n_groups, settings: SdrSettings):
        self.R = [np.asarray(r) for r in R]
        self.Rs = [np.asarray(r) for r in Rs]
        self.groups = np.asarray(groups, dtype=int)
        self.n_groups = int(n_groups)
        self.settings = settings
        self.log: List[dict] = []
        tr = np.array([np.real(np.trace(r)) for r in self.Rs])
        self.per_bin_budget = tr / tr.sum()

    def solve(self, U: np.ndarray, mu: float, budget="auto", stage: str = "") -> SdrIterate:
        s = self.settings
        if isinstance(budget, str):
            budget = self.per_bin_budget if s.selection_constraint == "per_bin" else None
        sol: ConicSolution = solve_group_sdr(
            self.R, self.Rs, self.groups, self.n_groups, U, mu,
            budget=budget, tol_gap=s.tol_gap, tol_feas=s.tol_feas, max_iter=s.max_solver_iters,
        )
        ratios = np.array([principal(Wb)[2] for Wb in sol.W])
        y = group_metric(sol.W, self.groups, self.n_groups)
        it = SdrIterate(
            W=sol.W, envelope=sol.envelope, U=np.asarray(U, dtype=float), mu=float(mu),
            objective=sol.objective, data_term=sol.data_term, penalty_term=sol.penalty_term,
            group_metric=y, rank_ratios=ratios, status=sol.status, solve_time=sol.solve_time,
        )
        card = detect_support(it, s.eta).cardinality
        self.log.append(
            {"stage": stage, "mu": float(mu), "objective": sol.objective,
             "cardinality": card, "status": sol.status, "solver_iterations": sol.iterations}
        )
        log.info("%s mu=%.4g objective=%.6g cardinality=%d status=%s (%.2fs)",
                 stage or "solve", mu, sol.objective, card, sol.status, sol.solve_time)
        return it


def _dft_problem(bin_corrs: BinCorrelations, settings: SdrSettings) -> GroupSdrProblem:
    n = bin_corrs.size
    return GroupSdrProblem(bin_corrs.R, bin_corrs.Rs, np.arange(n), n, settings)


def solve_sdr(
    bin_corrs: BinCorrelations,
    U: np.ndarray,
    mu: float,
    settings: Optional[SdrSettings] = None,
    budget=None,
) -> SdrIterate:
    """One reweighted SDR solve over all bins.

    ``budget=None`` imposes the summed desired-power constraint; an array
    imposes ``Tr(Rs_l W_l) >= budget[l]`` bin by bin.
    """
    settings = settings or SdrSettings()
    U = np.asarray(U, dtype=float)
    if np.any(U < 0):
        raise ValueError("U must be entrywise nonnegative")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    return _dft_problem(bin_corrs, settings).solve(U, mu, budget=budget)


def reweight_update(iterate: SdrIterate, epsilon: float = 0.05, mode: str = "eigen") -> np.ndarray:
    """Next reweighting matrix.

    ``eigen``: ``U = 1 / (y y^T + eps*max)`` from the rank-one group metric.
    ``envelope``: ``U = 1 / (Wt + eps*max)`` from the envelope itself.
    """
    if mode == "eigen":
        y = iterate.group_metric
        Y = np.outer(y, y)
    elif mode == "envelope":
        Y = np.asarray(iterate.envelope, dtype=float)
    else:
        raise ValueError(f"unknown reweight mode {mode!r}")
    top = float(np.max(Y))
    if not top > 0:
        raise DesignError("reweighting metric is identically zero")
    return 1.0 / (Y + epsilon * top)


def detect_support(iterate: SdrIterate, eta: float = 1e-3) -> SelectionMask:
    y = iterate.group_metric
    return SelectionMask(y > eta * np.max(y))


TIE_TOLERANCE = 1e-6


def top_p_mask(metric: np.ndarray, P: int, tie_tol: float = TIE_TOLERANCE) -> SelectionMask:
    """The P largest entries; values within ``tie_tol`` (relative to the largest)
    count as equal and resolve to the lower index.

    Mirror-symmetric problems produce pairwise-equal metrics that differ only by
    round-off, so exact comparison would pick a side at random.
    """
    metric = np.asarray(metric, dtype=float)
    top = float(np.max(np.abs(metric))) or 1.0
    key = np.round(metric / (top * tie_tol))
    order = np.lexsort((np.arange(metric.size), -key))
    return SelectionMask.from_indices(metric.size, order[:P])


@dataclass
class SelectionOutcome:
    mask: SelectionMask
    mu: float
    bisection_iterations: int
    fallback: bool
    cardinality_trace: List[int]


def _cardinality_search(problem: GroupSdrProblem, P: int, U: np.ndarray,
                        mu_lower: float, mu_upper: float) -> SelectionOutcome:
    s = problem.settings
    n = problem.n_groups
    if P == n:
        return SelectionOutcome(SelectionMask.full(n), mu_lower, 0, False, [n])
    lo, hi = mu_lower, mu_upper
    over: Optional[SdrIterate] = None
    trace = []
    for k in range(1, s.max_bisection_iters + 1):
        mu = 0.5 * (lo + hi)
        it = problem.solve(U, mu, stage=f"bisect[{k}]")
        mask = detect_support(it, s.eta)
        card = mask.cardinality
        trace.append(card)
        if card == P:
            return SelectionOutcome(mask, mu, k, False, trace)
        if card < P:
            hi = mu
        else:
            lo = mu
            over = it
    if over is None:
        it = problem.solve(U, mu_lower, stage="bisect[lower]")
        if detect_support(it, s.eta).cardinality < P:
            raise DesignError(
                f"cardinality {P} unreachable in [{mu_lower:.4g}, {mu_upper:.4g}]; widen the mu bounds"
            )
        over = it
    log.info("bisection cap reached; keeping the %d strongest groups", P)
    return SelectionOutcome(top_p_mask(over.group_metric, P), over.mu, s.max_bisection_iters, True, trace)


def initial_weights(n: int, tilt: float = 0.0) -> np.ndarray:
    """All-ones reweighting matrix, optionally tilted linearly along the aperture.

    A nonzero tilt breaks the mirror symmetry of uniform-array problems so that
    the reweighting can settle on one of two mirror-image supports.
    """
    if n == 1 or tilt == 0:
        return np.ones((n, n))
    r = np.arange(n) / (n - 1)
    return 1.0 + tilt * 0.5 * (r[:, None] + r[None, :])


@dataclass
class SparsityOutcome:
    U: np.ndarray
    mu_loop: float
    mu_upper: float
    iterations: int
    cardinality_trace: List[int]
    last: Optional[SdrIterate]
    first_u_spread: float = float("nan")  # max/min of U after the first reweighting


def _sparsity_loop(problem: GroupSdrProblem) -> SparsityOutcome:
    s = problem.settings
    n = problem.n_groups
    ones = np.ones((n, n))
    if s.mu_upper is None:
        it0 = problem.solve(ones, 0.0, stage="unpenalized")
        denom = float(np.sum(ones * it0.envelope))
        if not denom > 0:
            raise DesignError("unpenalized solve returned a zero envelope")
        mu_upper = s.mu_upper_factor * it0.data_term / denom
    else:
        mu_upper = s.mu_upper
    mu_loop = s.mu_lower + s.loop_mu_fraction * (mu_upper - s.mu_lower)
    U = initial_weights(n, s.init_tilt)
    trace: List[int] = []
    it = None
    first_spread = float("nan")
    stable = 1
    k = 0
    for k in range(1, s.max_reweight_iters + 1):
        it = problem.solve(U, mu_loop, stage=f"reweight[{k}]")
        card = detect_support(it, s.eta).cardinality
        U = reweight_update(it, s.epsilon, s.reweight_mode)
        if k == 1:
            first_spread = float(U.max() / U.min())
        if trace and card == trace[-1]:
            stable += 1
        else:
            stable = 1
        trace.append(card)
        if card < n and stable >= s.stable_iters:
            break
    return SparsityOutcome(U, mu_loop, mu_upper, k, trace, it, first_spread)


def cardinality_search(
    bin_corrs: BinCorrelations,
    P: int,
    U_frozen: np.ndarray,
    settings: Optional[SdrSettings] = None,
    mu_upper: Optional[float] = None,
):
    """Bisect the penalty weight until exactly P sensors remain.

    Returns ``(mask, mu)``. When the iteration cap is hit without an exact hit,
    the P strongest sensors of the last over-populated solve are kept.
    """
    settings = settings or SdrSettings()
    mu_upper = mu_upper if mu_upper is not None else settings.mu_upper
    if mu_upper is None:
        raise ValueError("mu_upper must be given either directly or through settings")
    if not settings.mu_lower < mu_upper:
        raise ValueError("mu_lower must be below mu_upper")
    if not 1 <= P <= bin_corrs.size:
        raise ValueError(f"P must lie in [1, {bin_corrs.size}]")
    out = _cardinality_search(_dft_problem(bin_corrs, settings), P, np.asarray(U_frozen, float),
                              settings.mu_lower, mu_upper)
    return out.mask, out.mu


@dataclass
class RefitOutcome:
    weights: np.ndarray  # (L, P)
    rank_ratios: np.ndarray
    iterate: SdrIterate


def final_refit(bin_corrs_reduced: BinCorrelations, settings: Optional[SdrSettings] = None) -> RefitOutcome:
    """Unpenalized SDR on the selected sensors and rank-one weight extraction.

    Each bin receives its own share of the desired-power budget, proportional to
    the source power in that bin, so every bin is a Capon problem on its own. The
    weights are then jointly scaled to ``sum_l w_l^H Rs_l w_l = 1``.
    """
    settings = settings or SdrSettings()
    bc = bin_corrs_reduced
    tr = np.real(np.trace(bc.Rs, axis1=1, axis2=2))
    budget = tr / tr.sum()
    problem = _dft_problem(bc, settings)
    it = problem.solve(np.ones((bc.size, bc.size)), 0.0, budget=budget, stage="refit")
    w = []
    for Wl in it.W:
        lam, v, _ = principal(Wl)
        w.append(np.sqrt(max(lam, 0.0)) * v)
    w = np.array(w)
    w = w * _phase_align(w, bc.steering)
    power = sum(np.real(np.vdot(w[l], bc.Rs[l] @ w[l])) for l in range(bc.bin_count))
    w = w / np.sqrt(power)
    return RefitOutcome(w, it.rank_ratios, it)


def _phase_align(w: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """Per-bin unit phasors making w_l^H a_l real and positive (removes eigh's arbitrary phase)."""
    g = np.einsum("lp,lp->l", w.conj(), steering)
    ph = np.ones_like(g)
    nz = np.abs(g) > 0
    ph[nz] = g[nz] / np.abs(g[nz])
    return ph[:, None]


def weights_sinr(weights: np.ndarray, bin_corrs_reduced: BinCorrelations) -> float:
    """Output SINR (linear) of explicit per-bin weights: total desired / total residual power."""
    bc = bin_corrs_reduced
    sig = sum(np.real(np.vdot(w, Rs @ w)) for w, Rs in zip(weights, bc.Rs))
    res = sum(np.real(np.vdot(w, Ri @ w)) for w, Ri in zip(weights, bc.R_in))
    return float(sig / res)


@dataclass
class DesignResult:
    mask: SelectionMask
    weights: np.ndarray
    sinr_db: float
    refit_sinr_db: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def P(self) -> int:
        return self.mask.cardinality

    def to_dict(self) -> dict:
        w = self.weights
        return {
            "mask": self.mask.indices,
            "mask_bits": self.mask.bitstring(),
            "cardinality": self.mask.cardinality,
            "sinr_db": float(self.sinr_db),
            "refit_sinr_db": float(self.refit_sinr_db),
            "weights": np.stack([w.real, w.imag], axis=-1).tolist(),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def select_sensors(problem: GroupSdrProblem, P: int):
    """Sparsity loop followed by the cardinality bisection."""
    n = problem.n_groups
    if not 1 <= P <= n:
        raise ValueError(f"P must lie in [1, {n}], got {P}")
    if P == n:
        return SelectionMask.full(n), {"reweight_iterations": 0, "bisection_iterations": 0,
                                       "final_mu": problem.settings.mu_lower, "mu_upper": None,
                                       "fallback": False, "sparsity_cardinality": [],
                                       "bisection_cardinality": []}
    sp_out = _sparsity_loop(problem)
    sel = _cardinality_search(problem, P, sp_out.U, problem.settings.mu_lower, sp_out.mu_upper)
    diag = {
        "reweight_iterations": sp_out.iterations,
        "bisection_iterations": sel.bisection_iterations,
        "final_mu": sel.mu,
        "mu_upper": sp_out.mu_upper,
        "loop_mu": sp_out.mu_loop,
        "fallback": sel.fallback,
        "sparsity_cardinality": sp_out.cardinality_trace,
        "first_u_spread": sp_out.first_u_spread,
        "bisection_cardinality": sel.cardinality_trace,
    }
    return sel.mask, diag


def design(
    scenario: Union[Scenario, BinCorrelations],
    P: int,
    settings: Optional[SdrSettings] = None,
) -> DesignResult:
    """Select P sensors and compute the per-bin beamformers.

    ``scenario`` may be a :class:`Scenario` (analytic correlations are used) or
    precomputed :class:`BinCorrelations`.
    """
    settings = settings or SdrSettings()
    bc = analytic_bin_correlations(scenario) if isinstance(scenario, Scenario) else scenario
    problem = _dft_problem(bc, settings)
    mask, diag = select_sensors(problem, P)
    reduced = restrict(bc, mask)
    refit = final_refit(reduced, settings)
    oracle = subset_output_sinr(bc, mask)
    diag["rank_ratios"] = refit.rank_ratios
    diag["solver_log"] = problem.log
    return DesignResult(
        mask=mask,
        weights=refit.weights,
        sinr_db=oracle.sinr_db,
        refit_sinr_db=float(to_db(weights_sinr(refit.weights, reduced))),
        diagnostics=diag,
    )
