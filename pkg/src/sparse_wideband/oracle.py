"""
Ground-truth MaxSINR scoring of sensor subsets and exhaustive best/worst search.

Per bin the optimum (Capon/MVDR) SINR has the closed form
``gamma = sigma^2 a^H R_in^{-1} a`` because the desired correlation is rank one.
Bins are combined as total desired power over total residual power under
distortionless per-bin weights.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .scenario import BinCorrelations, MaskLike, SelectionMask, as_mask, restrict

DEFAULT_BUDGET = 10_000_000


class EnumerationBudgetError(RuntimeError):
    pass


def to_db(x):
    return 10.0 * np.log10(x)


@dataclass
class SubsetEvaluation:
    mask: SelectionMask
    gamma: np.ndarray  # linear, per bin
    sinr: float  # linear, combined
    weights: Optional[np.ndarray] = None  # (L, P) distortionless MVDR weights

    @property
    def sinr_db(self) -> float:
        return float(to_db(self.sinr))

    @property
    def gamma_db(self) -> np.ndarray:
        return to_db(self.gamma)


def _rank_one_factor(Rs: np.ndarray) -> Tuple[np.ndarray, float]:
    lam, vec = np.linalg.eigh(Rs)
    return vec[:, -1], float(lam[-1])


def per_bin_max_sinr(
    R: np.ndarray, Rs: np.ndarray, steering: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    """Optimum SINR of one bin and its distortionless weight vector.

    Parameters
    ----------
    R : (N, N) received correlation
    Rs : (N, N) rank-one desired correlation
    steering : (N,) array, optional
        Desired steering vector. Recovered from ``Rs`` when omitted; the SINR
        does not depend on its scaling.
    """
    R = np.atleast_2d(R)
    Rs = np.atleast_2d(Rs)
    if steering is None:
        steering, _ = _rank_one_factor(Rs)
    a = np.asarray(steering, dtype=complex).reshape(-1)
    R_in = R - Rs
    try:
        c = np.linalg.cholesky(R_in)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("interference-plus-noise matrix is not positive definite") from exc
    # gamma = Tr(R_in^-1 Rs) for rank-one Rs
    z = np.linalg.solve(c, Rs)
    gamma = float(np.real(np.trace(np.linalg.solve(c.conj().T, z))))
    v = np.linalg.solve(R_in, a)
    w = v / np.vdot(a, v).conj()
    return gamma, w


def combine_sinr(gamma: np.ndarray, source_power: np.ndarray) -> np.ndarray:
    """Total desired power over total residual power across bins (last axis)."""
    p = np.asarray(source_power, dtype=float)
    return p.sum() / np.sum(p / gamma, axis=-1)


def subset_output_sinr(bin_corrs: BinCorrelations, mask: MaskLike) -> SubsetEvaluation:
    m = as_mask(mask)
    sub = restrict(bin_corrs, m)
    gam, ws = [], []
    for l in range(sub.bin_count):
        g, w = per_bin_max_sinr(sub.R[l], sub.Rs[l], sub.steering[l])
        gam.append(g)
        ws.append(w)
    gam = np.array(gam)
    return SubsetEvaluation(m, gam, float(combine_sinr(gam, sub.source_power)), np.array(ws))


def _batch_gamma(bin_corrs: BinCorrelations, subsets: np.ndarray) -> np.ndarray:
    """Per-bin gamma for a batch of index subsets, shape (C, P) -> (C, L)."""
    R_in = bin_corrs.R_in
    a = bin_corrs.steering
    p = bin_corrs.source_power
    rows = subsets[:, :, None]
    cols = subsets[:, None, :]
    # (C, L, P, P)
    Rsub = np.swapaxes(R_in[:, rows, cols], 0, 1)
    asub = np.swapaxes(a[:, subsets], 0, 1)  # (C, L, P)
    x = np.linalg.solve(Rsub, asub[..., None])[..., 0]
    quad = np.real(np.einsum("clp,clp->cl", asub.conj(), x))
    return p[None, :] * quad


def iter_subsets(n: int, p: int) -> Iterator[Tuple[int, ...]]:
    """All p-subsets of range(n) in lexicographic order."""
    return itertools.combinations(range(n), p)


@dataclass
class SearchResult:
    mask: SelectionMask
    evaluation: SubsetEvaluation
    visited_count: int
    objective: str
    all_sinr_db: Optional[np.ndarray] = None
    all_gamma_db: Optional[np.ndarray] = None
    subsets: Optional[np.ndarray] = None


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("SPARSE_WIDEBAND_THREADS", "1") or 1)
    return max(1, int(threads))


def exhaustive_search(
    bin_corrs: BinCorrelations,
    P: int,
    objective: str = "best",
    budget: int = DEFAULT_BUDGET,
    threads: Optional[int] = None,
    chunk_size: int = 2048,
    keep_all: bool = False,
) -> SearchResult:
    """Score every P-subset and return the best (or worst) one.

    Subsets are visited in lexicographic order and split into contiguous chunks;
    ties resolve to the lexicographically first subset whatever the chunking.
    """
    if objective not in ("best", "worst"):
        raise ValueError(f"objective must be 'best' or 'worst', got {objective!r}")
    n = bin_corrs.size
    if not 1 <= P <= n:
        raise ValueError(f"P must lie in [1, {n}], got {P}")
    total = math.comb(n, P)
    if total > budget:
        raise EnumerationBudgetError(
            f"C({n},{P}) = {total} subsets exceeds the enumeration budget {budget}"
        )
    subsets = np.array(list(iter_subsets(n, P)), dtype=np.intp).reshape(total, P)
    chunks = [subsets[i : i + chunk_size] for i in range(0, total, chunk_size)]

    def score(chunk):
        g = _batch_gamma(bin_corrs, chunk)
        return g, combine_sinr(g, bin_corrs.source_power)

    n_threads = _resolve_threads(threads)
    if n_threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(score, chunks))
    else:
        results = [score(c) for c in chunks]

    sinr = np.concatenate([r[1] for r in results])
    idx = int(np.argmax(sinr) if objective == "best" else np.argmin(sinr))
    mask = SelectionMask.from_indices(n, subsets[idx])
    evaluation = subset_output_sinr(bin_corrs, mask)
    out = SearchResult(mask, evaluation, total, objective)
    if keep_all:
        out.all_sinr_db = to_db(sinr)
        out.all_gamma_db = to_db(np.concatenate([r[0] for r in results]))
        out.subsets = subsets
    return out


def write_search_csv(result: SearchResult, n: int, path) -> None:
    """One row per evaluated subset: bitstring, per-bin gamma (dB), combined SINR (dB)."""
    if result.subsets is None:
        raise ValueError("search was run without keep_all=True")
    L = result.all_gamma_db.shape[1]
    with open(path, "w") as fh:
        fh.write("mask," + ",".join(f"gamma_db_{l}" for l in range(L)) + ",sinr_db\n")
        for sub, g, s in zip(result.subsets, result.all_gamma_db, result.all_sinr_db):
            bits = SelectionMask.from_indices(n, sub).bitstring()
            fh.write(bits + "," + ",".join(f"{v:.6g}" for v in g) + f",{s:.6g}\n")
