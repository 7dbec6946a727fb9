from dataclasses import dataclass

import numpy as np
import pytest

from periodic_resonance.nonlinearity import make_separable, profile
from periodic_resonance.spatial import DiffusionMatrix, assemble_operator, build_grid, constant, poschl_teller
from periodic_resonance.spectrum import compute_low_spectrum, recenter_resonance


@dataclass
class Well:
    grid: object
    op: object
    sd: object
    raw: object


def make_well(lam, half_width=20.0, points=2049, recenter=True):
    grid = build_grid(1, half_width, points)
    op = assemble_operator(grid, DiffusionMatrix.identity(1), poschl_teller(lam), constant(1.0), 1.0)
    raw = compute_low_spectrum(op)
    if recenter:
        op, sd = recenter_resonance(op, raw)
    else:
        sd = raw
    return Well(grid, op, sd, raw)


def sech_tanh_forcing(period=1.0):
    """f = sech^2(x) tanh(u) + 0.1 sech(x) sin(2 pi t / T)."""
    return make_separable(profile("sech2"), "tanh", profile("sech") * 0.1, period)


@pytest.fixture(scope="session")
def well2():
    return make_well(2)


@pytest.fixture(scope="session")
def well2_coarse():
    return make_well(2, points=1025)


@pytest.fixture(scope="session")
def well1():
    return make_well(1)


@pytest.fixture(scope="session")
def forcing():
    return sech_tanh_forcing()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
