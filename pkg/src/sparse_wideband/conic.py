"""
Group-sparse semidefinite relaxation assembled directly as a Clarabel conic program.

Problem solved (all blocks share one envelope ``Wt`` over sensor pairs)::

    minimize    sum_b Tr(R_b W_b) + mu * Tr(U Wt)
    subject to  signal constraint(s) on Tr(Rs_b W_b)
                Wt[g(i), g(j)] >= |W_b[i, j]|      for every block, i <= j
                W_b  PSD

Each Hermitian ``W_b = A_b + j B_b`` enters through its real symmetric embedding
``[[A, -B], [B, A]]``. The modulus bound is one 3-dimensional second-order cone
per strictly-upper entry and a linear bound on the diagonal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

_SQRT2 = np.sqrt(2.0)
_VERBOSE = False


class SolverError(RuntimeError):
    """The conic backend did not return a usable solution."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


@dataclass
class ConicSolution:
    W: List[np.ndarray]
    envelope: np.ndarray
    objective: float
    data_term: float
    penalty_term: float
    status: str
    iterations: int
    solve_time: float


class _BlockLayout:
    """Index bookkeeping for one d x d Hermitian block and its embedding."""

    def __init__(self, d: int):
        self.d = d
        iu = np.triu_indices(d)
        self.upper = iu
        self.n_a = len(iu[0])
        self.a_index = np.full((d, d), -1)
        self.a_index[iu] = np.arange(self.n_a)
        self.a_index[iu[1], iu[0]] = np.arange(self.n_a)
        su = np.triu_indices(d, 1)
        self.strict = su
        self.n_b = len(su[0])
        # b_index[i, j] = variable offset, sign[i, j] = +1 above / -1 below diagonal
        self.b_index = np.full((d, d), -1)
        self.b_sign = np.zeros((d, d))
        self.b_index[su] = np.arange(self.n_b)
        self.b_index[su[1], su[0]] = np.arange(self.n_b)
        self.b_sign[su] = 1.0
        self.b_sign[su[1], su[0]] = -1.0
        self.n_vars = self.n_a + self.n_b
        self._svec = self._embedding_svec()

    def _embedding_svec(self):
        """Rows of svec([[A,-B],[B,A]]) as (variable offset, coefficient) pairs.

        Clarabel's PSD triangle is the column-major upper triangle with
        off-diagonal entries scaled by sqrt(2).
        """
        d = self.d
        n2 = 2 * d
        rows, cols, vals = [], [], []
        k = 0
        for c in range(n2):
            for r in range(c + 1):
                scale = 1.0 if r == c else _SQRT2
                if (r < d) == (c < d):
                    i, j = r % d, c % d
                    rows.append(k)
                    cols.append(self.a_index[i, j])
                    vals.append(scale)
                else:
                    # r < d <= c: upper-right block holds -B[r, c-d]
                    i, j = r, c - d
                    if i != j:
                        rows.append(k)
                        cols.append(self.n_a + self.b_index[i, j])
                        vals.append(-scale * self.b_sign[i, j])
                k += 1
        return np.array(rows), np.array(cols), np.array(vals), k

    def trace_coefficients(self, M: np.ndarray) -> np.ndarray:
        """Coefficients c with c @ x == Re Tr(M W) for Hermitian M."""
        c = np.zeros(self.n_vars)
        iu = self.upper
        off = iu[0] != iu[1]
        ca = np.real(M[iu]).copy()
        ca[off] *= 2.0
        c[: self.n_a] = ca
        c[self.n_a :] = 2.0 * np.imag(M[self.strict])
        return c

    def unpack(self, x: np.ndarray) -> np.ndarray:
        a = x[: self.n_a][self.a_index]
        b = np.zeros((self.d, self.d))
        b[self.strict] = x[self.n_a :]
        b = b - b.T
        return a + 1j * b


def _problem_scale(Rs: Sequence[np.ndarray]) -> float:
    # Total desired power: puts the optimal W entries at O(1).
    total = float(sum(np.real(np.trace(r)) for r in Rs))
    return total if total > 0 else 1.0


def solve_group_sdr(
    R: Sequence[np.ndarray],
    Rs: Sequence[np.ndarray],
    groups: np.ndarray,
    n_groups: int,
    U: np.ndarray,
    mu: float,
    budget: Optional[Sequence[float]] = None,
    tol_gap: float = 1e-7,
    tol_feas: float = 1e-8,
    max_iter: int = 200,
) -> ConicSolution:
    """Solve the reweighted group-sparse SDR.

    Parameters
    ----------
    R, Rs : sequence of (d, d) Hermitian arrays
        One pair per block.
    groups : int array, shape (d,)
        Sensor (group) index of each block row; must be non-decreasing.
    n_groups : int
        Size of the envelope matrix.
    U : (n_groups, n_groups) array
        Nonnegative reweighting matrix.
    mu : float
        Penalty weight.
    budget : sequence of float, optional
        If None, one summed constraint ``sum_b Tr(Rs_b W_b) >= 1``; otherwise one
        constraint ``Tr(Rs_b W_b) >= budget[b]`` per block.
    """
    n_blocks = len(R)
    d = R[0].shape[0]
    groups = np.asarray(groups, dtype=int)
    if np.any(np.diff(groups) < 0):
        raise ValueError("groups must be non-decreasing")
    if np.any(U < 0) or mu < 0:
        raise ValueError("U and mu must be nonnegative")

    # Rescale so the data term is O(1); mu absorbs the factor.
    scale = _problem_scale(Rs)
    Rn = [np.asarray(r) / scale for r in R]
    Rsn = [np.asarray(r) / scale for r in Rs]
    mu_n = mu / scale

    lay = _BlockLayout(d)
    # Without a penalty the envelope has no cost and is unbounded above; it is
    # left out of the program and rebuilt from the solution instead.
    with_env = mu > 0
    n_env = n_groups * (n_groups + 1) // 2 if with_env else 0
    env_index = np.full((n_groups, n_groups), -1)
    eu = np.triu_indices(n_groups)
    env_index[eu] = np.arange(len(eu[0]))
    env_index[eu[1], eu[0]] = np.arange(len(eu[0]))
    env0 = n_blocks * lay.n_vars
    n_x = env0 + n_env

    q = np.zeros(n_x)
    for b in range(n_blocks):
        q[b * lay.n_vars : (b + 1) * lay.n_vars] = lay.trace_coefficients(Rn[b])
    u_coef = np.asarray(U, dtype=float)[eu].copy()
    u_coef[eu[0] != eu[1]] *= 2.0
    if with_env:
        q[env0:] = mu_n * u_coef

    A_blocks, b_blocks, cones = [], [], []

    # signal constraints: -sig(x) + s = -c, s >= 0
    sig = [lay.trace_coefficients(Rsn[b]) for b in range(n_blocks)]
    if budget is None:
        row = np.zeros(n_x)
        for b in range(n_blocks):
            row[b * lay.n_vars : (b + 1) * lay.n_vars] = sig[b]
        A_blocks.append(sp.csr_matrix(-row[None, :]))
        b_blocks.append(np.array([-1.0]))
        n_sig = 1
    else:
        budget = np.asarray(budget, dtype=float)
        rows = sp.lil_matrix((n_blocks, n_x))
        for b in range(n_blocks):
            rows[b, b * lay.n_vars : (b + 1) * lay.n_vars] = -sig[b]
        A_blocks.append(rows.tocsr())
        b_blocks.append(-budget)
        n_sig = n_blocks

    if with_env:
        _envelope_constraints(lay, groups, env_index, env0, n_blocks, n_x, A_blocks, b_blocks)
    n_lin = n_sig + (d * n_blocks if with_env else 0)
    cones.append(clarabel.NonnegativeConeT(n_lin))
    if with_env:
        cones.extend(clarabel.SecondOrderConeT(3) for _ in range(lay.n_b * n_blocks))

    # PSD embedding: s = svec(E(W_b))
    pr, pc, pv, n_svec = lay._svec
    for b in range(n_blocks):
        A_blocks.append(
            sp.csr_matrix((-pv, (pr, b * lay.n_vars + pc)), shape=(n_svec, n_x))
        )
        b_blocks.append(np.zeros(n_svec))
        cones.append(clarabel.PSDTriangleConeT(2 * d))

    A = sp.vstack(A_blocks, format="csc")
    bvec = np.concatenate(b_blocks)
    P = sp.csc_matrix((n_x, n_x))

    sol, status, elapsed = _solve_with_retries(P, q, A, bvec, cones, tol_gap, tol_feas, max_iter)

    x = np.asarray(sol.x)
    W = [_psd_part(lay.unpack(x[b * lay.n_vars : (b + 1) * lay.n_vars]) / scale) for b in range(n_blocks)]
    if with_env:
        env = x[env0:][env_index] / scale
    else:
        env = group_envelope(W, groups, n_groups)
    data = float(sum(np.real(np.trace(np.asarray(Rb) @ Wb)) for Rb, Wb in zip(R, W)))
    penalty = float(mu * np.sum(np.asarray(U) * env))
    return ConicSolution(
        W=W,
        envelope=env,
        objective=data + penalty,
        data_term=data,
        penalty_term=penalty,
        status=status,
        iterations=int(sol.iterations),
        solve_time=elapsed,
    )


_ACCEPTED = ("Solved", "AlmostSolved")


def _psd_part(W: np.ndarray) -> np.ndarray:
    """Hermitian part with eigenvalues clipped at zero (removes interior-point round-off)."""
    W = 0.5 * (W + W.conj().T)
    lam, vec = np.linalg.eigh(W)
    if lam.min() >= 0:
        return W
    return (vec * np.maximum(lam, 0.0)) @ vec.conj().T


def _settings(tol_gap, tol_feas, max_iter, static_reg):
    settings = clarabel.DefaultSettings()
    settings.verbose = _VERBOSE
    settings.tol_gap_abs = tol_gap
    settings.tol_gap_rel = tol_gap
    settings.tol_feas = tol_feas
    settings.max_iter = max_iter
    settings.max_threads = 1
    # The default (1e-8) stalls on the degenerate zero-penalty problems.
    settings.static_regularization_constant = static_reg
    return settings


def _solve_with_retries(P, q, A, b, cones, tol_gap, tol_feas, max_iter):
    """Solve, retrying with alternative regularization before giving up."""
    t0 = time.perf_counter()
    status = None
    for static_reg in (1e-7, 1e-8, 1e-6):
        solver = clarabel.DefaultSolver(P, q, A, b, cones, _settings(tol_gap, tol_feas, max_iter, static_reg))
        sol = solver.solve()
        status = str(sol.status)
        if status in _ACCEPTED:
            return sol, status, time.perf_counter() - t0
    raise SolverError(f"conic solver returned status {status}", status=status)


def group_envelope(W: Sequence[np.ndarray], groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Smallest feasible envelope: max modulus over blocks and group members."""
    groups = np.asarray(groups, dtype=int)
    mags = np.max(np.abs(np.asarray(W)), axis=0)
    env = np.zeros((n_groups, n_groups))
    np.maximum.at(env, (groups[:, None], groups[None, :]), mags)
    return env


def _envelope_constraints(lay, groups, env_index, env0, n_blocks, n_x, A_blocks, b_blocks):
    d = lay.d
    # diagonal: Wt[g,g] - A_ii >= 0
    diag = np.arange(d)
    g_diag = env_index[groups[diag], groups[diag]]
    nd = d * n_blocks
    r_idx = np.repeat(np.arange(nd), 2)
    c_idx = np.empty(2 * nd, dtype=int)
    v = np.empty(2 * nd)
    for b in range(n_blocks):
        sl = slice(2 * b * d, 2 * (b + 1) * d)
        c_pair = np.column_stack([env0 + g_diag, b * lay.n_vars + lay.a_index[diag, diag]])
        c_idx[sl] = c_pair.reshape(-1)
        v[sl] = np.tile([-1.0, 1.0], d)
    A_blocks.append(sp.csr_matrix((v, (r_idx, c_idx)), shape=(nd, n_x)))
    b_blocks.append(np.zeros(nd))
    # modulus cones (Wt, Re, Im) for strictly upper entries
    si, sj = lay.strict
    ns = lay.n_b
    g_off = env_index[groups[si], groups[sj]]
    soc_rows, soc_cols = [], []
    for b in range(n_blocks):
        base = 3 * ns * b
        soc_rows.append(base + 3 * np.arange(ns))
        soc_cols.append(env0 + g_off)
        soc_rows.append(base + 3 * np.arange(ns) + 1)
        soc_cols.append(b * lay.n_vars + lay.a_index[si, sj])
        soc_rows.append(base + 3 * np.arange(ns) + 2)
        soc_cols.append(b * lay.n_vars + lay.n_a + lay.b_index[si, sj])
    n_soc_rows = 3 * ns * n_blocks
    if n_soc_rows:
        rr = np.concatenate(soc_rows)
        cc = np.concatenate(soc_cols)
        A_blocks.append(sp.csr_matrix((-np.ones(rr.size), (rr, cc)), shape=(n_soc_rows, n_x)))
        b_blocks.append(np.zeros(n_soc_rows))
