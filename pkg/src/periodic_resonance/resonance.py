"""The averaged kernel map, its Brouwer degree, Landesman-Lazer and sphere-sign certificates."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .nonlinearity import Nonlinearity, time_average
from .spatial import Grid
from .spectrum import SpectralData, SpectrumError

log = logging.getLogger(__name__)

CoordMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class AveragedMap:
    """c -> coordinates of (1/T) int_0^T P F(s, sum c_k phi_k) ds."""

    spectral: SpectralData
    nl: Nonlinearity
    time_nodes: int = 64

    def __post_init__(self):
        if self.time_nodes < 16:
            raise ValueError("time_nodes must be >= 16")
        if self.spectral.kernel_dim < 1:
            raise SpectrumError("no resonance: the kernel is trivial")

    @property
    def dim(self) -> int:
        return self.spectral.kernel_dim

    @property
    def grid(self) -> Grid:
        return self.spectral.grid

    def __call__(self, c) -> np.ndarray:
        return averaged_map(self, c)


def averaged_map(am: AveragedMap, c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size != am.dim or not np.all(np.isfinite(c)):
        raise ValueError(f"expected {am.dim} finite coordinates, got {c}")
    basis = am.spectral.kernel_matrix
    grid = am.grid
    avg = time_average(am.nl, grid, basis @ c, am.time_nodes)
    return grid.cell_volume * (basis.T @ avg)


# -- Brouwer degree ------------------------------------------------------------------


@dataclass(frozen=True)
class DegreeConfig:
    starts_per_axis: int = 17
    newton_max: int = 60
    fd_relative_step: float = 1e-5
    dedup_relative: float = 1e-6
    singular_relative: float = 1e-8
    boundary_samples: int = 512
    boundary_relative_tol: float = 1e-10


@dataclass
class Zero:
    coords: np.ndarray
    jacobian_sign: int
    jacobian_condition: float


@dataclass
class DegreeResult:
    degree: Optional[int]
    zeros: list[Zero]
    method: str
    radius: float
    boundary_min: float
    boundary_degree: Optional[int] = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "method": self.method,
            "radius": self.radius,
            "boundary_min": self.boundary_min,
            "boundary_degree": self.boundary_degree,
            "zeros": [{"coords": z.coords.tolist(), "sign": z.jacobian_sign} for z in self.zeros],
            "notes": self.notes,
        }


def sphere_points(dim: int, count: int) -> np.ndarray:
    """Unit vectors: {-1, +1} in 1-D, equispaced angles in 2-D, a Fibonacci lattice in 3-D."""
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        a = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(a), np.sin(a)])
    if dim == 3:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        r = np.sqrt(1.0 - z * z)
        a = np.pi * (1.0 + np.sqrt(5.0)) * k
        return np.column_stack([r * np.cos(a), r * np.sin(a), z])
    raise ValueError("dimension must be 1, 2 or 3")


def fd_jacobian(fmap: CoordMap, c: np.ndarray, step: float) -> np.ndarray:
    """Central finite-difference Jacobian."""
    d = c.size
    jac = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        jac[:, k] = (np.asarray(fmap(c + e)) - np.asarray(fmap(c - e))) / (2.0 * step)
    return jac


def _damped_newton(fmap, c, step, scale, radius, cfg):
    fc = np.asarray(fmap(c), dtype=float)
    for _ in range(cfg.newton_max):
        norm = np.linalg.norm(fc)
        if norm <= 1e-13 * scale:
            return c, True
        jac = fd_jacobian(fmap, c, step)
        try:
            delta = np.linalg.solve(jac, -fc)
        except np.linalg.LinAlgError:
            return c, False
        if not np.all(np.isfinite(delta)):
            return c, False
        lam = 1.0
        while lam > 1e-6:
            trial = c + lam * delta
            ft = np.asarray(fmap(trial), dtype=float)
            if np.linalg.norm(ft) < (1.0 - 1e-4 * lam) * norm:
                break
            lam *= 0.5
        else:
            return c, False
        c, fc = trial, ft
        if np.linalg.norm(c) > 2.0 * radius:
            return c, False
        if np.linalg.norm(lam * delta) <= 1e-14 * radius:
            return c, np.linalg.norm(fc) <= 1e-9 * scale
    return c, np.linalg.norm(fc) <= 1e-9 * scale


def winding_degree_2d(fmap: CoordMap, radius: float, samples: int = 512, max_samples: int = 1 << 16) -> int:
    """Winding number of fmap around 0 along the circle |c| = radius.

    Angles are refined until no consecutive image angles differ by more than
    pi/4, so the unwrapped total is unambiguous.
    """
    n = samples
    while True:
        a = 2.0 * np.pi * np.arange(n + 1) / n
        vals = np.array([fmap(radius * np.array([np.cos(t), np.sin(t)])) for t in a])
        ang = np.arctan2(vals[:, 1], vals[:, 0])
        d = np.diff(ang)
        d = (d + np.pi) % (2.0 * np.pi) - np.pi
        if np.abs(d).max() <= np.pi / 4 or n >= max_samples:
            return int(round(d.sum() / (2.0 * np.pi)))
        n *= 4


def boundary_degree(fmap: CoordMap, radius: float, dim: int, samples: int = 512) -> Optional[int]:
    """Degree from boundary values alone (dim <= 2)."""
    if dim == 1:
        hi = float(np.asarray(fmap(np.array([radius])))[0])
        lo = float(np.asarray(fmap(np.array([-radius])))[0])
        return int(round((np.sign(hi) - np.sign(lo)) / 2.0))
    if dim == 2:
        return winding_degree_2d(fmap, radius, samples)
    return None


def brouwer_degree(fmap: CoordMap, radius: float, dim: int, cfg: DegreeConfig = DegreeConfig()) -> DegreeResult:
    """Degree of ``fmap`` on the ball B(0, radius) in R^dim, dim <= 3.

    Primary route: enumerate zeros in the ball by multistart damped Newton and
    sum the signs of their Jacobian determinants. For dim <= 2 the boundary
    degree (sign change or winding number) is computed as well; it becomes
    the answer when some Jacobian is singular.
    """
    if not 1 <= dim <= 3:
        raise ValueError("degree is supported for dim in {1, 2, 3}")
    if not radius > 0:
        raise ValueError("radius must be positive")
    sphere = radius * sphere_points(dim, cfg.boundary_samples)
    bvals = np.linalg.norm([np.asarray(fmap(c), dtype=float) for c in sphere], axis=1)
    bmin, bmax = float(bvals.min()), float(bvals.max())
    if bmin <= cfg.boundary_relative_tol * max(bmax, 1e-300):
        return DegreeResult(None, [], "regular_zeros", radius, bmin, None, ["map vanishes on the boundary sphere"])
    scale = bmax
    step = cfg.fd_relative_step * radius

    ticks = np.linspace(-radius, radius, cfg.starts_per_axis)
    zeros: list[np.ndarray] = []
    for start in itertools.product(ticks, repeat=dim):
        c0 = np.array(start, dtype=float)
        if np.linalg.norm(c0) >= radius:
            continue
        c, ok = _damped_newton(fmap, c0, step, scale, radius, cfg)
        if not ok or np.linalg.norm(c) >= radius:
            continue
        if all(np.linalg.norm(c - z) > cfg.dedup_relative * radius for z in zeros):
            zeros.append(c)

    found: list[Zero] = []
    singular = False
    det_scale = (scale / radius) ** dim
    for z in zeros:
        jac = fd_jacobian(fmap, z, step)
        det = float(np.linalg.det(jac))
        if abs(det) < cfg.singular_relative * det_scale:
            singular = True
        found.append(Zero(z, int(np.sign(det)), float(np.linalg.cond(jac))))

    bdeg = boundary_degree(fmap, radius, dim, cfg.boundary_samples)
    notes = []
    if singular:
        if bdeg is None:
            notes.append("singular Jacobian at a zero and no boundary route in dim 3")
            return DegreeResult(None, found, "regular_zeros", radius, bmin, None, notes)
        notes.append("singular Jacobian at a zero; degree taken from the boundary values")
        return DegreeResult(bdeg, found, "boundary_grid", radius, bmin, bdeg, notes)
    degree = int(sum(z.jacobian_sign for z in found))
    if bdeg is not None and bdeg != degree:
        notes.append(f"zero enumeration gives {degree} but the boundary route gives {bdeg}")
        log.warning(notes[-1])
    return DegreeResult(degree, found, "regular_zeros", radius, bmin, bdeg, notes)


# -- Landesman-Lazer -------------------------------------------------------------------

LL_POSITIVE = "positive"
LL_NEGATIVE = "negative"
INCONCLUSIVE = "inconclusive"


@dataclass
class LLCertificate:
    condition: str
    worst_direction: np.ndarray
    worst_value: float
    directions_tested: int
    values_plus: list[float] = field(default_factory=list)
    values_minus: list[float] = field(default_factory=list)
    directions: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "worst_direction": np.asarray(self.worst_direction).tolist(),
            "worst_value": self.worst_value,
            "directions_tested": self.directions_tested,
            "directions": self.directions,
            "values_plus": self.values_plus,
            "values_minus": self.values_minus,
        }


def kernel_directions(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Unit coordinate vectors: +-1 in 1-D, ``count`` equispaced angles in 2-D,
    seeded uniform samples of the sphere beyond that."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        return sphere_points(2, count)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def ll_integrals(am: AveragedMap, direction: np.ndarray) -> tuple[float, float]:
    """The two Landesman-Lazer integrals at phi = sum d_k phi_k.

    plus  = int_0^T ( int_{phi>0} liminf_{+inf} f phi + int_{phi<0} limsup_{-inf} f phi ) dt
    minus = int_0^T ( int_{phi>0} limsup_{+inf} f phi + int_{phi<0} liminf_{-inf} f phi ) dt
    Nodes with |phi| < 1e-12 are dropped.
    """
    nl = am.nl
    grid = am.grid
    phi = am.spectral.kernel_matrix @ np.asarray(direction, dtype=float)
    pos = phi > 1e-12
    neg = phi < -1e-12
    x = grid.points
    T = nl.period
    ts = T * np.arange(am.time_nodes) / am.time_nodes
    plus = minus = 0.0
    for t in ts:
        a = np.asarray(nl.limit_liminf_plus(t, x)) * phi
        b = np.asarray(nl.limit_limsup_minus(t, x)) * phi
        c = np.asarray(nl.limit_limsup_plus(t, x)) * phi
        d = np.asarray(nl.limit_liminf_minus(t, x)) * phi
        plus += a[pos].sum() + b[neg].sum()
        minus += c[pos].sum() + d[neg].sum()
    w = grid.cell_volume * T / am.time_nodes
    return float(w * plus), float(w * minus)


def ll_check(am: AveragedMap, grid: Optional[Grid] = None, directions: int = 64, seed: int = 0) -> LLCertificate:
    """Evaluate both Landesman-Lazer integrals over sampled kernel directions."""
    if not am.nl.has_limits:
        raise ValueError(f"{am.nl.name}: asymptotic limit functions are missing")
    if grid is not None and grid is not am.grid:
        am.spectral.kernel_basis[0].check_grid(grid)
    if directions < 2 * am.dim:
        raise ValueError(f"need at least {2 * am.dim} directions, got {directions}")
    dirs = kernel_directions(am.dim, directions, seed)
    vals = np.array([ll_integrals(am, d) for d in dirs])
    plus, minus = vals[:, 0], vals[:, 1]
    if np.all(plus > 0):
        k = int(np.argmin(plus))
        cond, worst = LL_POSITIVE, plus[k]
    elif np.all(minus < 0):
        k = int(np.argmax(minus))
        cond, worst = LL_NEGATIVE, minus[k]
    else:
        k = int(np.argmin(plus))
        cond, worst = INCONCLUSIVE, plus[k]
    return LLCertificate(cond, dirs[k], float(worst), len(dirs), plus.tolist(), minus.tolist(), dirs.tolist())


# -- sphere-sign certificates ---------------------------------------------------------------


@dataclass
class SphereSignReport:
    radii: list[float]
    min_values: list[float]
    max_values: list[float]
    sign: Optional[int]
    R0_hat: Optional[float]

    @property
    def success(self) -> bool:
        return self.sign is not None

    def to_dict(self) -> dict:
        return {
            "radii": self.radii,
            "min_values": self.min_values,
            "max_values": self.max_values,
            "sign": self.sign,
            "R0_hat": self.R0_hat,
        }


def sphere_sign_check(am: AveragedMap, radii: Sequence[float], directions: int = 64, seed: int = 0) -> SphereSignReport:
    """min and max over sampled unit directions of (F(R d), R d)_{L2} at each radius.

    R0_hat is the smallest listed radius from which every later radius has a
    uniformly positive (sign +1) or uniformly negative (sign -1) pairing.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly ascending")
    dirs = kernel_directions(am.dim, directions, seed)
    lo, hi = [], []
    for r in radii:
        vals = [float(np.dot(averaged_map(am, r * d), r * d)) for d in dirs]
        lo.append(min(vals))
        hi.append(max(vals))
    for sign, ok in ((1, [v > 0 for v in lo]), (-1, [v < 0 for v in hi])):
        if ok and ok[-1]:
            k = len(ok) - 1
            while k > 0 and ok[k - 1]:
                k -= 1
            return SphereSignReport(radii, lo, hi, sign, radii[k])
    return SphereSignReport(radii, lo, hi, None, None)


def certificate_json(ll: Optional[LLCertificate], degree: Optional[DegreeResult]) -> dict:
    """{condition, worst_direction, worst_value, degree, zeros}."""
    return {
        "condition": ll.condition if ll else None,
        "worst_direction": np.asarray(ll.worst_direction).tolist() if ll else None,
        "worst_value": ll.worst_value if ll else None,
        "degree": degree.degree if degree else None,
        "zeros": [{"coords": z.coords.tolist(), "sign": z.jacobian_sign} for z in degree.zeros] if degree else [],
    }
