import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from periodic_resonance.spatial import (
    DiffusionMatrix,
    Field,
    assemble_operator,
    build_grid,
    constant,
    gaussian,
    inner_l2,
    load_node_values,
    norm_h1,
    norm_l2,
    poschl_teller,
)


def test_grid_spacing_1d():
    g = build_grid(1, 20.0, 2049)
    assert g.spacing == 40 / 2048 == 0.01953125
    assert abs(g.spacing * (g.points_per_axis - 1) - 2 * g.half_width) <= 4 * np.finfo(float).eps * 40
    assert g.size == 2049
    assert g.points[0, 0] == -20.0 and g.points[-1, 0] == 20.0


def test_grid_node_count_2d():
    g = build_grid(2, 10.0, 129)
    assert g.size == 129**2 == 16641
    assert g.points.shape == (16641, 2)


@pytest.mark.parametrize("args", [(3, 20.0, 100), (1, 0.0, 100), (1, -1.0, 100), (1, 1.0, 15)])
def test_grid_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_field_rejects_nonfinite():
    g = build_grid(1, 1.0, 17)
    v = np.zeros(17)
    v[5] = np.nan
    with pytest.raises(FloatingPointError, match="node 5"):
        Field(g, v)


def test_field_values_are_read_only():
    g = build_grid(1, 1.0, 17)
    u = g.sample(lambda x: x[:, 0])
    with pytest.raises(ValueError):
        u.values[0] = 1.0


def test_inner_product_examples():
    g = build_grid(1, 4.0, 17)  # h = 0.5
    assert g.spacing == 0.5
    z = g.zeros()
    assert inner_l2(z, z) == 0.0
    v = np.zeros(17)
    v[8] = 2.0
    u = Field(g, v)
    assert inner_l2(u, u) == pytest.approx(2.0, abs=1e-15)


def test_gaussian_integral():
    g = build_grid(1, 20.0, 4097)
    u = g.sample(lambda x: np.exp(-x[:, 0] ** 2 / 2))
    assert abs(inner_l2(u, u) - np.sqrt(np.pi)) < 1e-6


def test_grid_mismatch():
    a = build_grid(1, 1.0, 17).zeros()
    b = build_grid(1, 1.0, 33).zeros()
    with pytest.raises(ValueError):
        inner_l2(a, b)


def test_h1_norm_of_gaussian():
    # int e^{-x^2} + int x^2 e^{-x^2} = sqrt(pi) (1 + 1/2)
    g = build_grid(1, 20.0, 4097)
    u = g.sample(lambda x: np.exp(-x[:, 0] ** 2 / 2))
    assert norm_h1(u) ** 2 == pytest.approx(1.5 * np.sqrt(np.pi), rel=1e-4)


def _free_operator(grid, vinf=1.0, v_bar=1.0, a=None):
    a = DiffusionMatrix.identity(grid.dimension) if a is None else a
    return assemble_operator(grid, a, constant(0.0), constant(vinf), v_bar)


def test_constant_interior_field():
    g = build_grid(1, 10.0, 101)
    op = _free_operator(g)
    out = op.apply(g.sample(1.0)).values
    assert np.allclose(out[1:-1], 1.0, atol=1e-12)


def _sine_error(points, L=10.0):
    g = build_grid(1, L, points)
    op = _free_operator(g)
    u = g.sample(lambda x: np.sin(np.pi * x[:, 0] / L))
    exact = (np.pi**2 / L**2 + 1) * u.values
    # the end nodes see a zero ghost where the sine is -sin(pi h / L)
    return np.max(np.abs(op.apply(u).values - exact)[1:-1])


def test_sine_eigenfunction_second_order():
    errs = [_sine_error(m) for m in (65, 129, 257, 513)]
    assert errs[-1] < 1e-5
    for a, b in zip(errs, errs[1:]):
        assert 3.8 < a / b < 4.2


def test_vinf_below_v_bar_rejected():
    g = build_grid(1, 10.0, 101)
    with pytest.raises(ValueError, match="v_bar"):
        _free_operator(g, vinf=1.0, v_bar=2.0)


def test_non_psd_diffusion_rejected():
    with pytest.raises(ValueError):
        DiffusionMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        DiffusionMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_mixed_stencil_on_quadratic():
    # u = x y: the cross stencil reproduces d^2u/dxdy = 1 exactly at interior nodes
    g = build_grid(2, 2.0, 33)
    a = DiffusionMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]))
    op = assemble_operator(g, a, constant(0.0), constant(1.0), 1.0)
    u = g.sample(lambda x: x[:, 0] * x[:, 1])
    out = (op.apply(u).values - u.values).reshape(g.shape)
    assert np.allclose(out[1:-1, 1:-1], -1.0, atol=1e-12)


def test_node_value_sidecar(tmp_path):
    g = build_grid(1, 1.0, 17)
    vals = np.linspace(0, 1, 17)
    p = tmp_path / "v0.csv"
    np.savetxt(p, vals, delimiter=",")
    assert np.allclose(load_node_values(p, g).values, vals)
    np.savetxt(p, vals[:-1], delimiter=",")
    with pytest.raises(ValueError, match="17"):
        load_node_values(p, g)


def test_poschl_teller_depth():
    x = np.array([[0.0], [1.0]])
    assert poschl_teller(2)(x)[0] == 6.0
    assert poschl_teller(1)(x)[1] == pytest.approx(2 / np.cosh(1.0) ** 2)


psd_matrices = st.tuples(
    st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(-0.9, 0.9)
).map(lambda t: np.array([[t[0], t[2] * np.sqrt(t[0] * t[1])], [t[2] * np.sqrt(t[0] * t[1]), t[1]]]))


@settings(max_examples=25, deadline=None)
@given(a=psd_matrices, seed=st.integers(0, 2**31 - 1), vbar=st.floats(0.1, 5.0))
def test_symmetry_and_coercivity_2d(a, seed, vbar):
    g = build_grid(2, 3.0, 17)
    op = assemble_operator(g, DiffusionMatrix(a), constant(0.0), constant(vbar), vbar)
    assert op.is_symmetric()
    r = np.random.default_rng(seed)
    u = Field(g, r.standard_normal(g.size))
    v = Field(g, r.standard_normal(g.size))
    lhs, rhs = inner_l2(op.apply(u), v), inner_l2(u, op.apply(v))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)
    assert op.quadratic_form(u) >= vbar * norm_l2(u) ** 2 - 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lam=st.floats(0.5, 3.0))
def test_symmetry_1d_with_well(seed, lam):
    g = build_grid(1, 10.0, 65)
    op = assemble_operator(g, DiffusionMatrix.identity(1), poschl_teller(lam), constant(1.0), 1.0)
    r = np.random.default_rng(seed)
    u, v = (Field(g, r.standard_normal(g.size)) for _ in range(2))
    lhs, rhs = inner_l2(op.apply(u), v), inner_l2(u, op.apply(v))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)
