import numpy as np
import pytest

from periodic_resonance.evolution import EXP_EULER
from periodic_resonance.nonlinearity import Nonlinearity, make_composite, zero_nonlinearity
from periodic_resonance.periodic import (
    CONVERGED,
    PreconditionError,
    SolveConfig,
    continue_in_epsilon,
    find_periodic,
    index_formula_prediction,
    local_index,
    reverify_half_step,
    verify_periodic_orbit,
    write_fixed_point_csv,
)
from periodic_resonance.resonance import AveragedMap, DegreeResult, brouwer_degree, ll_check
from periodic_resonance.spatial import Field, norm_h1, sech

from conftest import make_well


@pytest.fixture(scope="module")
def small_well():
    return make_well(2, half_width=10.0, points=257)


@pytest.fixture(scope="module")
def solved(well2_coarse, forcing):
    """Fixed point at epsilon = 0.01 seeded from the averaged-map zero."""
    cfg = SolveConfig()
    am = AveragedMap(well2_coarse.sd, forcing)
    cert = brouwer_degree(am, 2.0, 1)
    reports = continue_in_epsilon(well2_coarse.op, forcing, well2_coarse.sd, SolveConfig(epsilon_schedule=(0.01,)), cert)
    return cfg, cert, reports[0]


def test_zero_forcing_keeps_kernel_guess(small_well):
    phi = small_well.sd.kernel_basis[0]
    cfg = SolveConfig(scheme=EXP_EULER)
    rep = find_periodic(small_well.op, zero_nonlinearity(), small_well.sd, cfg, 0.7 * phi, 1.0)
    assert rep.status == CONVERGED
    assert norm_h1(rep.fixed_point - 0.7 * phi) <= 1e-8


def test_forcing_orthogonal_to_kernel_matches_modal_oracle(small_well):
    """u' = -A u + d sin(2 pi t) with d even, kernel odd: each mode has the periodic
    response y(0) = -s w / (lam^2 + w^2); the kernel mode stays at 0."""
    op = small_well.op
    d = 0.1 * sech(op.grid.points[:, 0])
    nl = Nonlinearity(f=lambda t, x, u: d * np.sin(2 * np.pi * t) + 0 * u, period=1.0)
    lam, vec = np.linalg.eigh(op.matrix.toarray())
    w = 2 * np.pi
    s = vec.T @ d
    keep = np.abs(lam) > 1e-6
    exact = vec[:, keep] @ (-s[keep] * w / (lam[keep] ** 2 + w**2))
    cfg = SolveConfig(dt=1 / 512)
    rep = find_periodic(op, nl, small_well.sd, cfg, op.grid.zeros(), 1.0)
    assert rep.converged
    err = norm_h1(rep.fixed_point - Field(op.grid, exact))
    assert err <= 1e-4 * max(1.0, norm_h1(Field(op.grid, exact)))


def test_precondition_errors(small_well, forcing):
    op, sd = small_well.op, small_well.sd
    with pytest.raises(PreconditionError):
        continue_in_epsilon(op, forcing, sd, SolveConfig(), None)
    zero = lambda t, x: np.zeros(x.shape[0])  # noqa: E731
    flat = make_composite(zero, zero, "tanh", 1.0)
    with pytest.raises(PreconditionError, match="inconclusive"):
        continue_in_epsilon(op, flat, sd, SolveConfig(), ll_check(AveragedMap(sd, flat)))
    with pytest.raises(PreconditionError):
        continue_in_epsilon(op, forcing, sd, SolveConfig(), DegreeResult(0, [], "regular_zeros", 1.0, 1.0))


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(epsilon_schedule=(0.5, 0.1))
    with pytest.raises(ValueError):
        SolveConfig(epsilon_schedule=(0.0, 1.0))
    with pytest.raises(ValueError):
        SolveConfig(apriori_R0=0.0)


def test_fixed_point_is_periodic(well2_coarse, forcing, solved):
    cfg, _, rep = solved
    assert rep.converged and rep.residual <= cfg.newton_tol
    assert verify_periodic_orbit(well2_coarse.op, forcing, cfg, rep) <= 1e-8


def test_half_step_reverification(well2_coarse, forcing, solved):
    cfg, _, rep = solved
    rep2, dist = reverify_half_step(well2_coarse.op, forcing, well2_coarse.sd, cfg, rep)
    assert rep2.converged
    assert dist <= 1e-3 * max(rep.h1_norm, 1e-3)


def test_local_index_standard_convention(well2_coarse, forcing, solved):
    cfg, _, rep = solved
    idx = local_index(well2_coarse.op, forcing, cfg, rep)
    eigs = sorted(abs(z) for z in rep.monodromy_leading_eigs)
    # psi direction: exp(3 + eps (sech^2 psi, psi)) = exp(3 + 0.01 * 0.8) to first order in eps;
    # the kernel eigenvalue is pushed just above 1
    assert eigs[-1] == pytest.approx(np.exp(3.0 + 0.01 * 0.8), rel=2e-3)
    assert 1.0 < eigs[-2] < 1.01
    assert idx == 1 and not rep.monodromy_unit_eigen


def test_index_matches_translation_convention(well2_coarse, forcing, solved):
    cfg, cert, rep = solved
    idx = local_index(well2_coarse.op, forcing, cfg, rep)
    sd = well2_coarse.sd
    assert idx == index_formula_prediction(sd.m_minus, cert.degree, sd.kernel_dim, translation_convention=True)


def test_index_formula_prediction_values():
    assert index_formula_prediction(1, 1) == -1
    assert index_formula_prediction(0, 1) == 1
    assert index_formula_prediction(1, 1, 1, translation_convention=True) == 1
    assert index_formula_prediction(0, -1, 2, translation_convention=True) == -1


def test_local_index_undefined_at_unit_eigenvalue(small_well):
    phi = small_well.sd.kernel_basis[0]
    cfg = SolveConfig(scheme=EXP_EULER)
    rep = find_periodic(small_well.op, zero_nonlinearity(), small_well.sd, cfg, 0 * phi, 1.0)
    assert local_index(small_well.op, zero_nonlinearity(), cfg, rep) is None
    assert rep.monodromy_unit_eigen and rep.index_local is None


def test_local_index_needs_converged_report(small_well):
    from periodic_resonance.periodic import PeriodicReport

    rep = PeriodicReport("failed", small_well.grid.zeros(), 1.0, 1.0)
    with pytest.raises(ValueError):
        local_index(small_well.op, zero_nonlinearity(), SolveConfig(), rep)


def test_apriori_bound_halts_continuation(well2_coarse, forcing):
    cfg = SolveConfig(epsilon_schedule=(0.01, 0.1), apriori_R0=1e-6)
    cert = brouwer_degree(AveragedMap(well2_coarse.sd, forcing), 2.0, 1)
    reports = continue_in_epsilon(well2_coarse.op, forcing, well2_coarse.sd, cfg, cert)
    assert len(reports) == 1 and not reports[0].apriori_ok


def test_fixed_point_csv(tmp_path, solved):
    rep = solved[2]
    path = tmp_path / "u.csv"
    write_fixed_point_csv(rep, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "x0,u" and len(rows) == 1 + rep.fixed_point.grid.size
    back = np.array([float(r.split(",")[1]) for r in rows[1:]])
    assert np.array_equal(back, rep.fixed_point.values)
