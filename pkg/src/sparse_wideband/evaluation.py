"""
Beampatterns, SINR reports, jammer attenuation and DOA sweeps, with CSV export.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .designer import DesignResult, SdrSettings, design, weights_sinr
from .oracle import exhaustive_search, subset_output_sinr, to_db
from .scenario import (
    BinCorrelations,
    MaskLike,
    Scenario,
    ScenarioError,
    analytic_bin_correlations,
    as_mask,
    restrict,
    steering_matrix,
)
from .tdl import build_stacked_correlations, tdl_design, tdl_exhaustive, temporal_steering

log = logging.getLogger(__name__)

GAIN_FLOOR_DB = -120.0
DEFAULT_GRID_STEP = 0.25
DISCREPANCY_TOL_DB = 0.05


def default_theta_grid(step_deg: float = DEFAULT_GRID_STEP) -> np.ndarray:
    n = int(round(180.0 / step_deg))
    return np.linspace(0.0, 180.0, n + 1)


@dataclass
class BeampatternGrid:
    """Peak-normalized gain ``gain_db[l, t]`` of bin ``l`` toward ``theta[t]``."""

    theta: np.ndarray
    frequencies: np.ndarray
    gain_db: np.ndarray
    reference: float  # linear peak magnitude used for normalization

    def gain_at(self, doa_deg: float) -> np.ndarray:
        """Per-bin gain (dB) at a grid angle."""
        idx = int(np.argmin(np.abs(self.theta - doa_deg)))
        if abs(self.theta[idx] - doa_deg) > 1e-9:
            raise ValueError(f"{doa_deg} deg is not on the angle grid")
        return self.gain_db[:, idx]


def _pattern_magnitude(weights, mask, scenario, theta, taps):
    m = as_mask(mask)
    idx = np.flatnonzero(m.bits)
    L = scenario.bin_count
    w = np.asarray(weights, dtype=complex)
    out = np.empty((L, len(theta)))
    # steering for every angle: (T, L, N)
    A = np.stack([steering_matrix(t, scenario.geometry, scenario.band) for t in theta])[:, :, idx]
    if taps:
        if w.shape != (m.cardinality, L):
            raise ValueError(f"delay-line weights must have shape {(m.cardinality, L)}, got {w.shape}")
        for l in range(L):
            # w^H (a_sp kron a_t) = sum_k conj(w_k)^T a_t * a_sp,k
            tap_gain = w.conj() @ temporal_steering(l, L)  # (P,)
            out[l] = np.abs(A[:, l, :] @ tap_gain)
    else:
        if w.shape != (L, m.cardinality):
            raise ValueError(f"per-bin weights must have shape {(L, m.cardinality)}, got {w.shape}")
        for l in range(L):
            out[l] = np.abs(A[:, l, :] @ w[l].conj())
    return out


def beampattern(
    weights: np.ndarray,
    mask: MaskLike,
    scenario: Scenario,
    theta_grid: Optional[Sequence[float]] = None,
    taps: bool = False,
) -> BeampatternGrid:
    """Frequency-dependent beampattern of a sparse array.

    Parameters
    ----------
    weights : ndarray
        Per-bin weights of shape (L, P), or delay-line weights of shape (P, L)
        when ``taps`` is true.
    mask : SelectionMask or bool array
        Active sensors; P is its cardinality.
    scenario : Scenario
        Supplies geometry and band.
    theta_grid : sequence of float, optional
        Angles in degrees; defaults to 0..180 at 0.25 deg.

    Returns
    -------
    BeampatternGrid
        ``20 log10 |w_l^H a(theta, l)|`` normalized to a 0 dB peak over the
        whole grid and floored at -120 dB.
    """
    theta = default_theta_grid() if theta_grid is None else np.asarray(theta_grid, dtype=float)
    if theta.size == 0:
        raise ValueError("empty angle grid")
    mag = _pattern_magnitude(weights, mask, scenario, theta, taps)
    ref = float(mag.max())
    if not ref > 0:
        raise ValueError("weights produce an identically zero pattern")
    return BeampatternGrid(theta, scenario.band.bin_frequencies, _normalized_db(mag, ref), ref)


def _normalized_db(mag, ref):
    with np.errstate(divide="ignore"):
        g = 20.0 * np.log10(np.asarray(mag) / ref)
    return np.maximum(g, GAIN_FLOOR_DB)


def write_beampattern_csv(grid: BeampatternGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["theta", "bin_index", "frequency", "gain_db"])
        for l, f in enumerate(grid.frequencies):
            for t, g in zip(grid.theta, grid.gain_db[l]):
                wr.writerow([_fmt(t), l, _fmt(f), _fmt(g)])


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.6g}"


def jammer_attenuation(
    weights: np.ndarray, mask: MaskLike, scenario: Scenario, taps: bool = False
) -> Dict[float, List[float]]:
    """Per-bin gain (dB) toward each jammer, relative to the gain toward the desired source."""
    out = {}
    doas = [s.doa_deg for s in scenario.interferers]
    mag = _pattern_magnitude(weights, mask, scenario, [scenario.desired.doa_deg] + doas, taps)
    ref = mag[:, 0]
    for k, d in enumerate(doas):
        with np.errstate(divide="ignore"):
            g = 20.0 * np.log10(mag[:, k + 1] / ref)
        out[d] = np.maximum(g, GAIN_FLOOR_DB).tolist()
    return out


@dataclass
class SinrReport:
    mask: List[int]
    sinr_db: float
    gamma_db: List[float]
    refit_sinr_db: Optional[float]
    discrepancy_db: Optional[float]
    discrepancy_flag: bool
    jammer_attenuation_db: Dict[float, List[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mask": self.mask,
            "sinr_db": self.sinr_db,
            "gamma_db": self.gamma_db,
            "refit_sinr_db": self.refit_sinr_db,
            "discrepancy_db": self.discrepancy_db,
            "discrepancy_flag": self.discrepancy_flag,
            "jammer_attenuation_db": {str(k): v for k, v in self.jammer_attenuation_db.items()},
        }


def sinr_report(
    result,
    bin_corrs: BinCorrelations,
    scenario: Optional[Scenario] = None,
) -> SinrReport:
    """Oracle SINR of a result's mask, per-bin gamma, refit cross-check, jammer attenuation.

    ``result`` may be a :class:`DesignResult` (weights are cross-checked) or a
    bare mask.
    """
    if isinstance(result, DesignResult):
        mask, weights = result.mask, result.weights
    else:
        mask, weights = as_mask(result), None
    ev = subset_output_sinr(bin_corrs, mask)
    refit_db = disc = None
    flag = False
    if weights is not None:
        refit_db = float(to_db(weights_sinr(weights, restrict(bin_corrs, mask))))
        disc = abs(refit_db - ev.sinr_db)
        flag = bool(disc > DISCREPANCY_TOL_DB)
    if weights is None:
        weights = ev.weights
    att = jammer_attenuation(weights, mask, scenario) if scenario is not None else {}
    return SinrReport(mask.indices, ev.sinr_db, ev.gamma_db.tolist(), refit_db, disc, flag, att)


SWEEP_COLUMNS = ("sinr_dft_sdr", "sinr_dft_enum", "sinr_tdl_sdr", "sinr_tdl_enum")


@dataclass
class SweepRow:
    shift_deg: float
    desired_doa: float
    sinr_dft_sdr: float = math.nan
    sinr_dft_enum: float = math.nan
    sinr_tdl_sdr: float = math.nan
    sinr_tdl_enum: float = math.nan
    masks: Dict[str, List[int]] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"shift_deg": self.shift_deg, "desired_doa": self.desired_doa}
        for c in SWEEP_COLUMNS:
            v = getattr(self, c)
            d[c] = None if math.isnan(v) else v
        d["masks"] = self.masks
        d["errors"] = self.errors
        return d


def _run_cell(column: str, scenario: Scenario, P: int, settings: SdrSettings, tdl_max_real_dim: int):
    if column == "sinr_dft_sdr":
        r = design(scenario, P, settings)
        return r.sinr_db, r.mask.indices
    if column == "sinr_dft_enum":
        r = exhaustive_search(analytic_bin_correlations(scenario), P)
        return r.evaluation.sinr_db, r.mask.indices
    if column == "sinr_tdl_sdr":
        r = tdl_design(scenario, P, settings, max_real_dim=tdl_max_real_dim)
        return r.sinr_db, r.mask.indices
    if column == "sinr_tdl_enum":
        r = tdl_exhaustive(build_stacked_correlations(scenario), P)
        return r.evaluation.sinr_db, r.mask.indices
    raise ValueError(column)


def sweep(
    base: Scenario,
    shift_step_deg: float,
    n_steps: int,
    P: int,
    settings: Optional[SdrSettings] = None,
    columns: Sequence[str] = SWEEP_COLUMNS,
    threads: int = 1,
    tdl_max_real_dim: int = 96,
) -> List[SweepRow]:
    """Rigidly shift every DOA by ``k * shift_step_deg`` for k = 0..n_steps.

    Each (shift, method) cell is independent; a failing cell is recorded as NaN
    with its error message and the sweep continues.
    """
    settings = settings or SdrSettings()
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    unknown = set(columns) - set(SWEEP_COLUMNS)
    if unknown:
        raise ValueError(f"unknown sweep columns {sorted(unknown)}")
    scenes = []
    for k in range(n_steps + 1):
        shift = k * shift_step_deg
        try:
            sc = base.shifted(shift)
        except ScenarioError as exc:
            raise ScenarioError(f"shift {shift} deg leaves the visible region: {exc}") from exc
        doas = [s.doa_deg for s in sc.sources]
        if min(doas) <= 0.0 or max(doas) >= 180.0:
            raise ScenarioError(f"shift {shift} deg puts a source at endfire")
        scenes.append((shift, sc))
    rows = [SweepRow(shift, sc.desired.doa_deg) for shift, sc in scenes]
    cells = [(i, c) for i in range(len(scenes)) for c in columns]

    def run(cell):
        i, col = cell
        try:
            return i, col, _run_cell(col, scenes[i][1], P, settings, tdl_max_real_dim), None
        except Exception as exc:  # noqa: BLE001 - recorded per cell by contract
            log.warning("sweep cell shift=%g %s failed: %s", scenes[i][0], col, exc)
            return i, col, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    for i, col, value, err in results:
        if err is None:
            setattr(rows[i], col, float(value[0]))
            rows[i].masks[col] = value[1]
        else:
            rows[i].errors[col] = err
    return rows


def sweep_flags(rows: Sequence[SweepRow]) -> Dict[str, bool]:
    """Row-wise orderings: enumeration dominates design; delay line vs per-bin optimum."""

    def ge(a, b):
        vals = [(getattr(r, a), getattr(r, b)) for r in rows]
        vals = [(x, y) for x, y in vals if not (math.isnan(x) or math.isnan(y))]
        return all(x >= y - 1e-9 for x, y in vals)

    return {
        "dft_enum_ge_sdr": ge("sinr_dft_enum", "sinr_dft_sdr"),
        "tdl_enum_ge_sdr": ge("sinr_tdl_enum", "sinr_tdl_sdr"),
        "tdl_enum_ge_dft_enum": ge("sinr_tdl_enum", "sinr_dft_enum"),
    }


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["shift_deg", "desired_doa", *SWEEP_COLUMNS])
        for r in rows:
            wr.writerow([_fmt(r.shift_deg), _fmt(r.desired_doa), *(_fmt(getattr(r, c)) for c in SWEEP_COLUMNS)])
