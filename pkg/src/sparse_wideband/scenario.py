"""
Scene description and per-bin correlation matrices for a wideband linear array.

A scene is a set of uncorrelated far-field sources with flat spectra over a band
that is split into ``L`` DFT bins. Each bin is treated as a narrowband problem
with its own steering vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np


class ScenarioError(ValueError):
    """Raised for scene parameters outside their valid domain."""


def db_to_linear(value_db: float) -> float:
    return float(10.0 ** (value_db / 10.0))


@dataclass(frozen=True)
class Band:
    """Signal band split into ``bin_count`` DFT bins.

    ``carrier`` and ``bandwidth`` share one normalized frequency unit; only their
    ratios enter the spatial steering. The defaults put the upper edge at 1 and
    the lower edge at 0.5 (one octave).
    """

    carrier: float = 0.75
    bandwidth: float = 0.5
    bin_count: int = 8

    def __post_init__(self):
        if int(self.bin_count) != self.bin_count or self.bin_count < 1:
            raise ScenarioError(f"bin_count must be a positive integer, got {self.bin_count}")
        if self.bandwidth <= 0:
            raise ScenarioError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.omega_min <= 0:
            raise ScenarioError(
                f"lower band edge must be positive (carrier={self.carrier}, bandwidth={self.bandwidth})"
            )
        if self.omega_max > np.pi:
            raise ScenarioError(f"upper band edge {self.omega_max} exceeds pi")

    @property
    def omega_min(self) -> float:
        return self.carrier - self.bandwidth / 2.0

    @property
    def omega_max(self) -> float:
        return self.carrier + self.bandwidth / 2.0

    @property
    def resolution(self) -> float:
        return self.bandwidth / self.bin_count

    def bin_frequency(self, l: int) -> float:
        """Frequency carried by bin ``l`` (anchored at the lower band edge)."""
        return self.omega_min + l * self.resolution

    @property
    def bin_frequencies(self) -> np.ndarray:
        return self.omega_min + np.arange(self.bin_count) * self.resolution


@dataclass(frozen=True)
class ArrayGeometry:
    """Candidate sensor positions in units of half the minimum wavelength."""

    n_positions: int
    positions: Optional[tuple] = None

    def __post_init__(self):
        if int(self.n_positions) != self.n_positions or self.n_positions < 1:
            raise ScenarioError(f"n_positions must be a positive integer, got {self.n_positions}")
        if self.positions is None:
            object.__setattr__(self, "positions", tuple(range(self.n_positions)))
        pos = tuple(int(p) for p in self.positions)
        if len(pos) != self.n_positions:
            raise ScenarioError("positions length does not match n_positions")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ScenarioError("positions must be strictly increasing")
        object.__setattr__(self, "positions", pos)

    @property
    def position_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)


@dataclass(frozen=True)
class SourceSpec:
    """Far-field source with a flat spectrum over the band.

    ``power_db`` is relative to the per-bin noise power.
    """

    doa_deg: float
    power_db: float = 0.0
    role: str = "interferer"

    def __post_init__(self):
        if not 0.0 <= self.doa_deg <= 180.0:
            raise ScenarioError(f"doa_deg must lie in [0, 180], got {self.doa_deg}")
        if self.role not in ("desired", "interferer"):
            raise ScenarioError(f"unknown source role {self.role!r}")

    def bin_powers(self, band: Band, noise_power: float) -> np.ndarray:
        return np.full(band.bin_count, db_to_linear(self.power_db) * noise_power)


@dataclass(frozen=True)
class Scenario:
    geometry: ArrayGeometry
    band: Band
    desired: SourceSpec
    interferers: tuple = ()
    noise_power: float = 1.0

    def __post_init__(self):
        if self.desired.role != "desired":
            object.__setattr__(self, "desired", replace(self.desired, role="desired"))
        jams = tuple(
            j if j.role == "interferer" else replace(j, role="interferer") for j in self.interferers
        )
        object.__setattr__(self, "interferers", jams)
        if not self.noise_power > 0:
            raise ScenarioError(f"noise_power must be positive, got {self.noise_power}")

    @property
    def n_positions(self) -> int:
        return self.geometry.n_positions

    @property
    def bin_count(self) -> int:
        return self.band.bin_count

    @property
    def sources(self) -> List[SourceSpec]:
        return [self.desired, *self.interferers]

    def shifted(self, delta_deg: float) -> "Scenario":
        """Rigidly translate every DOA by ``delta_deg``."""
        return replace(
            self,
            desired=replace(self.desired, doa_deg=self.desired.doa_deg + delta_deg),
            interferers=tuple(replace(j, doa_deg=j.doa_deg + delta_deg) for j in self.interferers),
        )

    def mirrored(self) -> "Scenario":
        """Reflect every DOA about broadside (theta -> 180 - theta)."""
        return replace(
            self,
            desired=replace(self.desired, doa_deg=180.0 - self.desired.doa_deg),
            interferers=tuple(replace(j, doa_deg=180.0 - j.doa_deg) for j in self.interferers),
        )


def example_1(
    fractional_ratio: float = 0.5, bin_count: int = 8, n_positions: int = 18
) -> Scenario:
    """The 18-position, 8-bin scene with a 60 deg source and four 30 dB jammers.

    ``fractional_ratio`` is the lower-to-upper band-edge ratio; the upper edge
    is normalized to 1.
    """
    omega_min = fractional_ratio
    band = Band(carrier=(1.0 + omega_min) / 2.0, bandwidth=1.0 - omega_min, bin_count=bin_count)
    return Scenario(
        geometry=ArrayGeometry(n_positions),
        band=band,
        desired=SourceSpec(60.0, 0.0, "desired"),
        interferers=tuple(SourceSpec(d, 30.0) for d in (50.0, 70.0, 120.0, 150.0)),
        noise_power=1.0,
    )


def steering_vector(
    doa_deg: float, l: int, geometry: ArrayGeometry, band: Band
) -> np.ndarray:
    """Spatial steering vector of bin ``l``.

    Entry ``k`` is ``exp(j*pi*(f_l/f_max)*x_k*cos(theta))`` with ``x_k`` the
    position in half-wavelength units at the top of the band.
    """
    if not 0.0 <= doa_deg <= 180.0:
        raise ScenarioError(f"doa_deg must lie in [0, 180], got {doa_deg}")
    if int(l) != l or not 0 <= l < band.bin_count:
        raise ScenarioError(f"bin index {l} outside [0, {band.bin_count})")
    ratio = band.bin_frequency(l) / band.omega_max
    phase = np.pi * ratio * geometry.position_array * np.cos(np.deg2rad(doa_deg))
    return np.exp(1j * phase)


def steering_matrix(doa_deg: float, geometry: ArrayGeometry, band: Band) -> np.ndarray:
    """Steering vectors for every bin stacked as an (L, N) array."""
    return np.stack([steering_vector(doa_deg, l, geometry, band) for l in range(band.bin_count)])


MaskLike = Union["SelectionMask", Sequence[bool], np.ndarray]


@dataclass(frozen=True, eq=False)
class SelectionMask:
    """Boolean selection of sensor positions, shared by all bins."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool).reshape(-1)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_indices(cls, n: int, indices: Iterable[int]) -> "SelectionMask":
        bits = np.zeros(n, dtype=bool)
        bits[list(indices)] = True
        return cls(bits)

    @classmethod
    def full(cls, n: int) -> "SelectionMask":
        return cls(np.ones(n, dtype=bool))

    @property
    def n(self) -> int:
        return self.bits.size

    @property
    def cardinality(self) -> int:
        return int(self.bits.sum())

    @property
    def indices(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.bits)]

    def mirror(self) -> "SelectionMask":
        return SelectionMask(self.bits[::-1])

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def __eq__(self, other):
        if isinstance(other, SelectionMask):
            return np.array_equal(self.bits, other.bits)
        return NotImplemented

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        return f"SelectionMask({self.bitstring()})"


def as_mask(mask: MaskLike) -> SelectionMask:
    return mask if isinstance(mask, SelectionMask) else SelectionMask(np.asarray(mask))


@dataclass(frozen=True, eq=False)
class BinCorrelations:
    """Per-bin received and desired-source correlation matrices.

    Attributes
    ----------
    R : ndarray, shape (L, N, N)
        Received correlation of every bin.
    Rs : ndarray, shape (L, N, N)
        Rank-one desired-source correlation ``sigma_l^2 a_l a_l^H``.
    steering : ndarray, shape (L, N)
        Desired-source steering vectors.
    source_power : ndarray, shape (L,)
        Desired-source power per bin.
    """

    R: np.ndarray
    Rs: np.ndarray
    steering: np.ndarray
    source_power: np.ndarray

    def __post_init__(self):
        for name in ("R", "Rs", "steering", "source_power"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def bin_count(self) -> int:
        return self.R.shape[0]

    @property
    def size(self) -> int:
        return self.R.shape[1]

    @property
    def R_in(self) -> np.ndarray:
        """Interference-plus-noise part ``R - Rs``."""
        return self.R - self.Rs

    def scaled(self, factor: float) -> "BinCorrelations":
        return BinCorrelations(
            self.R * factor, self.Rs * factor, self.steering, self.source_power * factor
        )


def _outer(a: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...j->...ij", a, a.conj())


def analytic_bin_correlations(scenario: Scenario) -> BinCorrelations:
    """Exact per-bin correlations of mutually uncorrelated sources in white noise."""
    geo, band = scenario.geometry, scenario.band
    n = geo.n_positions
    a_s = steering_matrix(scenario.desired.doa_deg, geo, band)
    p_s = scenario.desired.bin_powers(band, scenario.noise_power)
    Rs = p_s[:, None, None] * _outer(a_s)
    R = Rs + scenario.noise_power * np.eye(n)[None, :, :]
    for jam in scenario.interferers:
        a_j = steering_matrix(jam.doa_deg, geo, band)
        R = R + jam.bin_powers(band, scenario.noise_power)[:, None, None] * _outer(a_j)
    return BinCorrelations(R, Rs, a_s, p_s)


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synthesize_snapshots(scenario: Scenario, n_blocks: int, seed: Optional[int] = None) -> np.ndarray:
    """Draw frequency-domain snapshots, one vector per (block, bin).

    Returns
    -------
    ndarray, shape (T, L, N)
        Source amplitudes and noise are independent circular complex Gaussians.
    """
    if n_blocks < 1:
        raise ScenarioError(f"n_blocks must be >= 1, got {n_blocks}")
    rng = np.random.default_rng(seed)
    geo, band = scenario.geometry, scenario.band
    L, n = band.bin_count, geo.n_positions
    X = np.zeros((n_blocks, L, n), dtype=complex)
    for src in scenario.sources:
        amp = np.sqrt(src.bin_powers(band, scenario.noise_power))
        g = _crandn(rng, (n_blocks, L))
        X += (amp * g)[:, :, None] * steering_matrix(src.doa_deg, geo, band)[None, :, :]
    X += np.sqrt(scenario.noise_power) * _crandn(rng, (n_blocks, L, n))
    return X


def estimate_bin_correlations(
    snapshots: np.ndarray, scenario: Scenario, loading: float = 1e-6
) -> BinCorrelations:
    """Sample correlations averaged over blocks, with relative diagonal loading.

    The desired-source part is built from the known look direction.
    """
    X = np.asarray(snapshots)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ScenarioError("snapshot set must have shape (T, L, N) with T >= 1")
    T, L, n = X.shape
    R = np.einsum("tli,tlj->lij", X, X.conj()) / T
    R = 0.5 * (R + np.conj(np.swapaxes(R, 1, 2)))
    if loading > 0:
        tr = np.real(np.trace(R, axis1=1, axis2=2)) / n
        R = R + (loading * tr)[:, None, None] * np.eye(n)[None, :, :]
    a_s = steering_matrix(scenario.desired.doa_deg, scenario.geometry, scenario.band)
    p_s = scenario.desired.bin_powers(scenario.band, scenario.noise_power)
    return BinCorrelations(R, p_s[:, None, None] * _outer(a_s), a_s, p_s)


def restrict(bin_corrs: BinCorrelations, mask: MaskLike) -> BinCorrelations:
    """Keep the rows and columns of the selected sensors, in order."""
    m = as_mask(mask)
    if m.n != bin_corrs.size:
        raise ScenarioError(f"mask length {m.n} does not match array size {bin_corrs.size}")
    if m.cardinality < 1:
        raise ScenarioError("cannot restrict to an empty mask")
    idx = np.flatnonzero(m.bits)
    sub = np.ix_(np.arange(bin_corrs.bin_count), idx, idx)
    return BinCorrelations(
        bin_corrs.R[sub], bin_corrs.Rs[sub], bin_corrs.steering[:, idx], bin_corrs.source_power
    )


def correlations_to_csv(bin_corrs: BinCorrelations, path) -> None:
    """Write every R_l as rows of interleaved real/imag pairs, one block per bin."""
    L, n = bin_corrs.bin_count, bin_corrs.size
    with open(path, "w") as fh:
        header = ["bin", "row"] + [f"{p}{j}" for j in range(n) for p in ("re", "im")]
        fh.write(",".join(header) + "\n")
        for l in range(L):
            for i in range(n):
                row = bin_corrs.R[l, i]
                vals = np.column_stack([row.real, row.imag]).reshape(-1)
                fh.write(f"{l},{i}," + ",".join(f"{v:.6g}" for v in vals) + "\n")


def random_scenario(
    rng: np.random.Generator,
    n_positions: int = 8,
    bin_count: int = 4,
    n_jammers: Optional[int] = None,
    inr_db: tuple = (20.0, 30.0),
    snr_db: float = 0.0,
    min_separation_deg: float = 5.0,
    band: Optional[Band] = None,
) -> Scenario:
    """Random desk-scale scene: one desired source and 2-4 jammers.

    Jammers keep ``min_separation_deg`` from the desired DOA.
    """
    if n_jammers is None:
        n_jammers = int(rng.integers(2, 5))
    desired = float(rng.uniform(30.0, 150.0))
    jams = []
    while len(jams) < n_jammers:
        doa = float(rng.uniform(10.0, 170.0))
        if abs(doa - desired) >= min_separation_deg:
            jams.append(SourceSpec(doa, float(rng.uniform(*inr_db))))
    if band is None:
        band = Band(carrier=0.75, bandwidth=0.5, bin_count=bin_count)
    return Scenario(
        geometry=ArrayGeometry(n_positions),
        band=band,
        desired=SourceSpec(desired, snr_db, "desired"),
        interferers=tuple(jams),
    )
