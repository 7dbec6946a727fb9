"""Truncated-domain discretization: grids, grid functions and the operator A.

The unbounded space R^N (N = 1 or 2) is replaced by the box [-L, L]^N with a
uniform grid of M points per axis. Grid functions vanish outside the box
(homogeneous Dirichlet truncation), so every finite-difference stencil treats
the ghost values just beyond the box as zero.

Node ordering is row-major: in 2D the value at (x_i, y_j) sits at ``i*M + j``.
Callables evaluated on a grid receive the node coordinates as an array of
shape ``(n_nodes, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

ScalarFunction = Callable[[np.ndarray], np.ndarray]
FieldLike = Union["Field", np.ndarray, ScalarFunction, float]

MIN_POINTS_PER_AXIS = 16


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [-half_width, half_width]^dimension."""

    dimension: int
    half_width: float
    points_per_axis: int
    boundary: str = field(default="dirichlet", repr=False)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.points_per_axis < MIN_POINTS_PER_AXIS:
            raise ValueError(
                f"points_per_axis must be >= {MIN_POINTS_PER_AXIS}, got {self.points_per_axis}"
            )

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points_per_axis - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dimension

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dimension

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @cached_property
    def axis(self) -> np.ndarray:
        i = np.arange(self.points_per_axis)
        return -self.half_width + i * self.spacing

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape (size, dimension)."""
        mesh = np.meshgrid(*([self.axis] * self.dimension), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def radius(self) -> np.ndarray:
        r = np.linalg.norm(self.points, axis=1)
        r.setflags(write=False)
        return r

    def sample(self, fn: FieldLike) -> "Field":
        """Turn a callable, constant, array or Field into a Field on this grid."""
        if isinstance(fn, Field):
            fn.check_grid(self)
            return fn
        if callable(fn):
            values = np.asarray(fn(self.points), dtype=float)
            if values.ndim == 0:
                values = np.full(self.size, float(values))
        elif np.isscalar(fn):
            values = np.full(self.size, float(fn))
        else:
            values = np.asarray(fn, dtype=float).ravel()
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.size))


def build_grid(dimension: int, half_width: float, points_per_axis: int) -> Grid:
    return Grid(int(dimension), float(half_width), int(points_per_axis))


@dataclass(frozen=True, eq=False)
class Field:
    """Real grid function. Values are stored flat and frozen."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).ravel()
        if values.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise FloatingPointError(
                f"non-finite field value at node {bad} (x={self.grid.points[bad].tolist()})"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def check_grid(self, grid: Grid) -> None:
        if grid != self.grid:
            raise ValueError("fields live on different grids")

    def like(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def __add__(self, other: "Field") -> "Field":
        other.check_grid(self.grid)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        other.check_grid(self.grid)
        return Field(self.grid, self.values - other.values)

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, float(scalar) * self.values)

    __rmul__ = __mul__

    def as_array(self) -> np.ndarray:
        """Values reshaped to the grid shape."""
        return self.values.reshape(self.grid.shape)


# -- quadrature and norms ---------------------------------------------------


def _same_grid(u: Field, v: Field) -> None:
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")


def inner_l2(u: Field, v: Field) -> float:
    """Rectangle-rule L2 inner product h^N * sum(u*v)."""
    _same_grid(u, v)
    return float(u.grid.cell_volume * np.dot(u.values, v.values))


def norm_l2(u: Field) -> float:
    return float(np.sqrt(inner_l2(u, u)))


def centered_derivative(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Centered first difference along ``axis`` with zero ghost values."""
    arr = np.asarray(values, dtype=float).reshape(grid.shape)
    pad = [(0, 0)] * grid.dimension
    pad[axis] = (1, 1)
    padded = np.pad(arr, pad)
    hi = [slice(None)] * grid.dimension
    lo = [slice(None)] * grid.dimension
    hi[axis] = slice(2, None)
    lo[axis] = slice(None, -2)
    return ((padded[tuple(hi)] - padded[tuple(lo)]) / (2.0 * grid.spacing)).ravel()


def h1_norm_values(values: np.ndarray, grid: Grid) -> float:
    sq = float(np.dot(values, values))
    for k in range(grid.dimension):
        d = centered_derivative(values, grid, k)
        sq += float(np.dot(d, d))
    return float(np.sqrt(grid.cell_volume * sq))


def norm_h1(u: Field) -> float:
    """Discrete H1 norm: sqrt(|u|^2 + sum_k |D_k u|^2) in the rectangle rule."""
    return h1_norm_values(u.values, u.grid)


# -- the linear operator ----------------------------------------------------


@dataclass(frozen=True)
class DiffusionMatrix:
    """Constant symmetric positive semidefinite coefficient matrix (a_ij)."""

    a: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"diffusion matrix must be square, got shape {a.shape}")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-14):
            raise ValueError("diffusion matrix must be symmetric")
        lam_min = float(np.linalg.eigvalsh(a).min())
        if lam_min < -1e-12:
            raise ValueError(f"diffusion matrix is not positive semidefinite (min eigenvalue {lam_min:.3e})")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def dimension(self) -> int:
        return self.a.shape[0]

    @classmethod
    def identity(cls, dimension: int) -> "DiffusionMatrix":
        return cls(np.eye(dimension))


def _second_difference(m: int, h: float) -> sp.csr_matrix:
    ones = np.ones(m)
    return sp.diags([ones[:-1], -2.0 * ones, ones[:-1]], [-1, 0, 1], format="csr") / h**2


def _first_difference(m: int, h: float) -> sp.csr_matrix:
    ones = np.ones(m - 1)
    return sp.diags([-ones, ones], [-1, 1], format="csr") / (2.0 * h)


def diffusion_stencil(grid: Grid, a: DiffusionMatrix) -> sp.csr_matrix:
    """Matrix of -sum_ij a_ij d^2/dx_j dx_i with zero Dirichlet ghosts."""
    if a.dimension != grid.dimension:
        raise ValueError(f"diffusion matrix is {a.dimension}x{a.dimension} on a {grid.dimension}D grid")
    m, h = grid.points_per_axis, grid.spacing
    d2 = _second_difference(m, h)
    if grid.dimension == 1:
        return (-a.a[0, 0] * d2).tocsr()
    eye = sp.identity(m, format="csr")
    d1 = _first_difference(m, h)
    dxx = sp.kron(d2, eye)
    dyy = sp.kron(eye, d2)
    # kron(D1, D1) is the 4-point cross stencil for the mixed derivative
    dxy = sp.kron(d1, d1)
    return (-(a.a[0, 0] * dxx + a.a[1, 1] * dyy + (a.a[0, 1] + a.a[1, 0]) * dxy)).tocsr()


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse symmetric matrix of A = -sum a_ij d_i d_j - V0 + Vinf on a grid."""

    grid: Grid
    matrix: sp.csr_matrix
    v_bar_infinity: float
    potential_v0: Field
    potential_vinf: Field
    diffusion: DiffusionMatrix

    def apply(self, u: Field) -> Field:
        u.check_grid(self.grid)
        return Field(self.grid, self.matrix @ u.values)

    def quadratic_form(self, u: Field) -> float:
        return inner_l2(self.apply(u), u)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        diff = (self.matrix - self.matrix.T).tocoo()
        if diff.nnz == 0:
            return True
        scale = max(1.0, float(abs(self.matrix).max()))
        return float(np.abs(diff.data).max()) <= tol * scale

    def gershgorin_lower_bound(self) -> float:
        mat = self.matrix.tocsr()
        diag = mat.diagonal()
        off = np.asarray(abs(mat).sum(axis=1)).ravel() - np.abs(diag)
        return float(np.min(diag - off))

    def shifted(self, shift: float) -> "DiscreteOperator":
        """Operator with Vinf (and its lower bound) lowered by ``shift``: A - shift*I."""
        v_bar = self.v_bar_infinity - shift
        if v_bar <= 0:
            raise ValueError(f"shift {shift} would make the lower bound of Vinf non-positive")
        matrix = (self.matrix - shift * sp.identity(self.grid.size, format="csr")).tocsr()
        vinf = Field(self.grid, self.potential_vinf.values - shift)
        return DiscreteOperator(self.grid, matrix, v_bar, self.potential_v0, vinf, self.diffusion)


def assemble_operator(
    grid: Grid,
    a: DiffusionMatrix | np.ndarray | float,
    v0: FieldLike,
    vinf: FieldLike,
    v_bar: float,
) -> DiscreteOperator:
    """Assemble A on ``grid``.

    ``v0`` and ``vinf`` may be callables of the node coordinates, constants,
    node-value arrays or Fields. Raises ``ValueError`` if Vinf drops below
    ``v_bar`` anywhere on the grid or ``a`` is not symmetric PSD.
    """
    if not v_bar > 0:
        raise ValueError(f"v_bar must be positive, got {v_bar}")
    if not isinstance(a, DiffusionMatrix):
        a = DiffusionMatrix(np.atleast_2d(np.asarray(a, dtype=float)))
    v0_field = grid.sample(v0)
    vinf_field = grid.sample(vinf)
    low = float(vinf_field.values.min())
    if low < v_bar:
        node = int(np.argmin(vinf_field.values))
        raise ValueError(
            f"Vinf = {low} < v_bar = {v_bar} at node {node} (x={grid.points[node].tolist()})"
        )
    matrix = diffusion_stencil(grid, a) + sp.diags(vinf_field.values - v0_field.values)
    return DiscreteOperator(grid, matrix.tocsr(), float(v_bar), v0_field, vinf_field, a)


# -- built-in potentials ----------------------------------------------------


def sech(r: np.ndarray) -> np.ndarray:
    return 1.0 / np.cosh(np.clip(r, -700.0, 700.0))


def poschl_teller(lam: float) -> ScalarFunction:
    """lam*(lam+1)*sech^2(|x|); the 1D well has bound states at -(lam-k)^2."""
    depth = lam * (lam + 1.0)

    def v(x):
        return depth * sech(np.linalg.norm(x, axis=-1)) ** 2

    return v


def constant(c: float) -> ScalarFunction:
    def v(x):
        return np.full(x.shape[0], float(c))

    return v


def gaussian(amplitude: float, sigma: float) -> ScalarFunction:
    def v(x):
        return amplitude * np.exp(-np.sum(x**2, axis=-1) / (2.0 * sigma**2))

    return v


def load_node_values(path: str | Path, grid: Grid) -> Field:
    """Tabulated values from a CSV sidecar: one value per node, row-major."""
    values = np.loadtxt(path, delimiter=",", ndmin=1).ravel()
    if values.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} node values, found {values.size}")
    return Field(grid, values)
