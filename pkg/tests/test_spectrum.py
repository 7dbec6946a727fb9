import time

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from periodic_resonance.spatial import DiffusionMatrix, Field, assemble_operator, build_grid, constant, inner_l2, norm_l2, poschl_teller
from periodic_resonance.spectrum import (
    SpectrumError,
    compute_low_spectrum,
    project_kernel,
    project_negative,
    recenter_resonance,
    reconstruct,
)

from conftest import make_well


def normalized(grid, fn):
    u = grid.sample(fn)
    return u * (1.0 / norm_l2(u))


def aligned_error(u, ref):
    s = np.sign(inner_l2(u, ref))
    return norm_l2(u * s - ref)


def test_lambda1_single_bound_state(well1):
    sd = well1.sd
    assert sd.kernel_dim == 1 and sd.m_minus == 0
    assert abs(well1.raw.eigenvalues[0]) < 1e-3
    phi = normalized(well1.grid, lambda x: 1 / np.cosh(x[:, 0]))
    assert aligned_error(sd.kernel_basis[0], phi) < 1e-3


def test_lambda2_bound_states(well2):
    sd = well2.sd
    assert np.allclose(well2.raw.eigenvalues, [-3.0, 0.0], atol=1e-3)
    assert sd.m_minus == 1 and sd.kernel_dim == 1
    kern = normalized(well2.grid, lambda x: np.tanh(x[:, 0]) / np.cosh(x[:, 0]))
    neg = normalized(well2.grid, lambda x: 1 / np.cosh(x[:, 0]) ** 2)
    assert aligned_error(sd.kernel_basis[0], kern) < 1e-3
    assert aligned_error(sd.negative_basis[0], neg) < 1e-3


def test_free_operator_has_no_bound_states():
    g = build_grid(1, 20.0, 513)
    op = assemble_operator(g, DiffusionMatrix.identity(1), constant(0.0), constant(1.0), 1.0)
    sd = compute_low_spectrum(op)
    assert sd.m_minus == 0 and sd.kernel_dim == 0 and sd.eigenvalues.size == 0
    assert np.all(sd.computed_eigenvalues >= 1.0 - 1e-12)


def test_raw_kernel_needs_recentering(well2):
    # the O(h^2) shift of the zero eigenvalue exceeds the default zero_tol
    assert well2.raw.kernel_dim == 0
    assert well2.sd.recentering_shift == pytest.approx(well2.raw.eigenvalues[1])
    assert well2.sd.to_dict()["recentering_shift"] == well2.sd.recentering_shift


def test_eigenvalues_converge_with_refinement():
    errs = []
    for m in (513, 1025, 2049):
        w = make_well(2, points=m, recenter=False)
        errs.append(np.max(np.abs(w.raw.eigenvalues - [-3.0, 0.0])))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_against_scipy_eigsh(well2):
    # independent oracle: ARPACK shift-invert on the raw operator
    vals = spla.eigsh(make_well(2, recenter=False).op.matrix.tocsc(), k=4, sigma=-10.0, which="LM", return_eigenvectors=False)
    assert np.allclose(np.sort(vals)[:2], well2.raw.computed_eigenvalues[:2], atol=1e-9)


def test_spectral_invariants(well2):
    sd = well2.sd
    basis = sd.eigenvectors
    gram = np.array([[inner_l2(a, b) for b in basis] for a in basis])
    assert np.allclose(gram, np.eye(len(basis)), atol=1e-10)
    for lam, psi in zip(sd.eigenvalues, basis):
        r = well2.op.apply(psi) - psi * lam
        assert norm_l2(r) <= 1e-8 * (abs(lam) + 1)
    for phi in sd.kernel_basis:
        assert norm_l2(well2.op.apply(phi)) <= 10 * sd.zero_tol * norm_l2(phi)
    assert sd.m_minus + sd.kernel_dim <= sd.computed_eigenvalues.size
    assert np.all(np.diff(sd.eigenvalues) >= 0)


def test_warning_when_count_too_small(well2):
    sd = compute_low_spectrum(make_well(2, recenter=False).op, count=2)
    assert any("below v_bar" in w for w in sd.warnings)


def test_ill_separated_warning():
    w = make_well(2, recenter=False)
    sd = compute_low_spectrum(w.op, zero_tol=2e-5)
    assert any("ill-separated" in m for m in sd.warnings)


def test_degenerate_kernel_2d():
    # radial lambda=2 well in 2-D: a two-fold degenerate level (x and y directions)
    g = build_grid(2, 8.0, 97)
    op = assemble_operator(g, DiffusionMatrix.identity(2), poschl_teller(2.0), constant(1.0), 1.0)
    sd = compute_low_spectrum(op, count=6)
    pair = sd.computed_eigenvalues[1:3]
    assert abs(pair[0] - pair[1]) < 1e-9
    gram = np.array([[inner_l2(a, b) for b in sd.eigenvectors[:3]] for a in sd.eigenvectors[:3]])
    assert np.allclose(gram, np.eye(3), atol=1e-10)


def test_project_kernel_examples(well2, rng):
    sd = well2.sd
    phi = sd.kernel_basis[0]
    psi = sd.negative_basis[0]
    assert project_kernel(sd, phi) == pytest.approx([1.0], abs=1e-10)
    assert abs(project_kernel(sd, psi)[0]) < 1e-10
    noise = Field(well2.grid, rng.standard_normal(well2.grid.size))
    noise = noise - reconstruct(sd, project_kernel(sd, noise))
    assert project_kernel(sd, phi * 2.0 + noise) == pytest.approx([2.0], abs=1e-10)


def test_project_negative_examples(well1, well2):
    sd = well2.sd
    psi, phi = sd.negative_basis[0], sd.kernel_basis[0]
    assert norm_l2(project_negative(sd, psi) - psi) < 1e-10
    assert norm_l2(project_negative(sd, psi + phi) - psi) < 1e-10
    assert norm_l2(project_negative(well1.sd, well1.sd.kernel_basis[0])) == 0.0


def test_trivial_kernel_projection_errors():
    g = build_grid(1, 10.0, 129)
    op = assemble_operator(g, DiffusionMatrix.identity(1), constant(0.0), constant(1.0), 1.0)
    sd = compute_low_spectrum(op, count=2)
    with pytest.raises(SpectrumError):
        project_kernel(sd, g.zeros())


def test_recenter_is_noop_without_nearby_eigenvalue():
    g = build_grid(1, 20.0, 513)
    op = assemble_operator(g, DiffusionMatrix.identity(1), poschl_teller(1.5), constant(1.0), 1.0)
    sd = compute_low_spectrum(op)
    op2, sd2 = recenter_resonance(op, sd)
    assert op2 is op and sd2 is sd and sd.kernel_dim == 0 and sd.m_minus == 1


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-5, 5), seed=st.integers(0, 10**6))
def test_projection_round_trip(well2, c, seed):
    sd = well2.sd
    assert project_kernel(sd, reconstruct(sd, [c])) == pytest.approx([c], abs=1e-10)
    r = np.random.default_rng(seed)
    u = Field(well2.grid, r.standard_normal(well2.grid.size))
    v = Field(well2.grid, r.standard_normal(well2.grid.size))
    pu = project_negative(sd, u)
    assert norm_l2(project_negative(sd, pu) - pu) < 1e-10 * max(1, norm_l2(pu))
    assert abs(inner_l2(pu, v) - inner_l2(u, project_negative(sd, v))) < 1e-9


def test_spectrum_runtime():
    t0 = time.perf_counter()
    make_well(2)
    assert time.perf_counter() - t0 < 30.0
