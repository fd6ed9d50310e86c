"""
Sparse array design for wideband beamforming.

Selects P of N uniformly spaced sensor positions for a DFT-domain (per-bin)
MaxSINR beamformer with a reweighted semidefinite relaxation, and compares
against exhaustive enumeration and a tapped-delay-line beamformer.
"""

from .designer import DesignResult, SdrSettings, design
from .evaluation import beampattern, sinr_report, sweep
from .oracle import exhaustive_search, subset_output_sinr
from .scenario import (
    ArrayGeometry,
    Band,
    BinCorrelations,
    Scenario,
    SelectionMask,
    SourceSpec,
    analytic_bin_correlations,
    estimate_bin_correlations,
    example_1,
    synthesize_snapshots,
)
from .tdl import build_stacked_correlations, tdl_design, tdl_exhaustive

__all__ = [
    "ArrayGeometry",
    "Band",
    "BinCorrelations",
    "DesignResult",
    "Scenario",
    "SdrSettings",
    "SelectionMask",
    "SourceSpec",
    "analytic_bin_correlations",
    "beampattern",
    "build_stacked_correlations",
    "design",
    "estimate_bin_correlations",
    "example_1",
    "exhaustive_search",
    "sinr_report",
    "subset_output_sinr",
    "sweep",
    "synthesize_snapshots",
    "tdl_design",
    "tdl_exhaustive",
]
