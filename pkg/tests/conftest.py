"""Shared scenes and cached expensive results."""

from __future__ import annotations

import numpy as np
import pytest

from sparse_wideband.designer import SdrSettings, design
from sparse_wideband.oracle import exhaustive_search
from sparse_wideband.scenario import analytic_bin_correlations, example_1, random_scenario

DESK_SEED = 0
DESK_COUNT = 20


def desk_scenes(seed: int = DESK_SEED, count: int = DESK_COUNT):
    """The seeded N=8, L=4 desk scenes: one 0 dB source, 2-4 jammers at 20-30 dB."""
    rng = np.random.default_rng(seed)
    return [random_scenario(rng, n_positions=8, bin_count=4) for _ in range(count)]


@pytest.fixture(scope="session")
def example1():
    return example_1()


@pytest.fixture(scope="session")
def example1_corrs(example1):
    return analytic_bin_correlations(example1)


@pytest.fixture(scope="session")
def example1_best(example1_corrs):
    return exhaustive_search(example1_corrs, 10, "best")


@pytest.fixture(scope="session")
def example1_worst(example1_corrs):
    return exhaustive_search(example1_corrs, 10, "worst")


@pytest.fixture(scope="session")
def example1_design(example1_corrs):
    """Full reweighted-SDR design of the 18-position scene (several minutes)."""
    return design(example1_corrs, 10, SdrSettings())


@pytest.fixture(scope="session")
def desk():
    """Desk scenes with their correlations, SDR designs and full enumerations.

    Returns a list of per-scene records; ``desk_elapsed`` holds the wall time.
    """
    import time

    t0 = time.perf_counter()
    out = []
    for sc in desk_scenes():
        bc = analytic_bin_correlations(sc)
        res = design(bc, 4)
        best = exhaustive_search(bc, 4, "best", keep_all=True)
        out.append({"scenario": sc, "corrs": bc, "design": res, "best": best,
                    "worst_db": float(np.min(best.all_sinr_db))})
    DESK_TIMING["elapsed"] = time.perf_counter() - t0
    return out


DESK_TIMING: dict = {}


# --- acceptance summary ------------------------------------------------------

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def record_criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" -- {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
