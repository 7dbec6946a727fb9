"""Time integration of u' = -A u + eps F(t, u), the period map and tail diagnostics."""

from __future__ import annotations

import csv
import logging
import math
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .krylov import lanczos_function
from .nonlinearity import Nonlinearity, time_average
from .spatial import DiscreteOperator, Field, Grid, h1_norm_values, norm_l2
from .spectrum import SpectralData, SpectrumError

log = logging.getLogger(__name__)

IMEX_CN = "IMEX_CN"
EXP_EULER = "EXP_EULER"
SCHEMES = (IMEX_CN, EXP_EULER)
BLOWUP_H1 = 1e6

RhsValues = Callable[[float, np.ndarray], np.ndarray]


class BlowUpError(FloatingPointError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Time stepping parameters.

    The step actually used is t_end / ceil(t_end / dt), so it never exceeds dt
    and always lands on t_end.
    """

    dt: float
    scheme: str = IMEX_CN
    epsilon: float = 1.0
    substep_tolerance: float = 1e-10
    krylov_dim: int = 64

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.substep_tolerance > 0:
            raise ValueError("substep_tolerance must be positive")

    def check_period(self, period: float) -> None:
        if self.dt > period / 16.0 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds T/16={period / 16.0}")

    def with_epsilon(self, epsilon: float) -> "IntegratorConfig":
        return IntegratorConfig(self.dt, self.scheme, epsilon, self.substep_tolerance, self.krylov_dim)

    def with_dt(self, dt: float) -> "IntegratorConfig":
        return IntegratorConfig(dt, self.scheme, self.epsilon, self.substep_tolerance, self.krylov_dim)


def identity_modulus(mu: float) -> float:
    return float(mu)


@dataclass(frozen=True)
class HomotopyConfig:
    mu: float
    quadrature_nodes: int = 64
    rho_modulus: Callable[[float], float] = identity_modulus

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if self.quadrature_nodes < 2:
            raise ValueError("quadrature_nodes must be >= 2")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: tuple[Field, ...]
    h1_norm_max: float

    @property
    def final(self) -> Field:
        return self.states[-1]

    @property
    def grid(self) -> Grid:
        return self.states[0].grid


# -- right-hand sides ------------------------------------------------------------


def nonlinearity_rhs(nl: Optional[Nonlinearity], grid: Grid) -> RhsValues:
    """Node-value form of F for the steppers; None means F = 0."""
    if nl is None:
        return lambda t, v: np.zeros_like(v)
    if isinstance(nl, Nonlinearity):
        return lambda t, v: nl.values(t, grid, v)
    if callable(nl):
        # any callable (t, Field) -> Field, e.g. a homotopy right-hand side
        return lambda t, v: nl(t, Field(grid, v)).values
    raise TypeError(f"cannot use {type(nl).__name__} as a right-hand side")


# -- steppers --------------------------------------------------------------------

_lu_cache: "weakref.WeakKeyDictionary[DiscreteOperator, dict]" = weakref.WeakKeyDictionary()


def _cn_factors(op: DiscreteOperator, h: float):
    per_op = _lu_cache.setdefault(op, {})
    key = round(h, 15)
    if key not in per_op:
        n = op.grid.size
        eye = sp.identity(n, format="csc")
        lhs = (eye + 0.5 * h * op.matrix).tocsc()
        rhs = (eye - 0.5 * h * op.matrix).tocsr()
        per_op[key] = (spla.splu(lhs), rhs)
    return per_op[key]


class _Stepper:
    def __init__(self, op: DiscreteOperator, rhs: RhsValues, cfg: IntegratorConfig, h: float):
        self.op, self.rhs, self.cfg, self.h = op, rhs, cfg, h
        self.eps = cfg.epsilon
        if cfg.scheme == IMEX_CN:
            self.lu, self.explicit = _cn_factors(op, h)

    def step(self, t: float, u: np.ndarray) -> np.ndarray:
        if self.cfg.scheme == IMEX_CN:
            return self._cn(t, u)
        return self._expeuler(t, u)

    def _cn(self, t, u):
        h = self.h
        base = self.explicit @ u
        if self.eps == 0.0:
            return self.lu.solve(base)
        f0 = self.rhs(t, u)
        pred = self.lu.solve(base + h * self.eps * f0)
        f1 = self.rhs(t + h, pred)
        return self.lu.solve(base + 0.5 * h * self.eps * (f0 + f1))

    def _expeuler(self, t, u):
        b = self.eps * self.rhs(t, u) if self.eps != 0.0 else np.zeros_like(u)
        return self._exp_sub(u, b, self.h, 0)

    def _exp_sub(self, u, b, tau, depth):
        mv = self.op.matrix.dot
        tol, dim = self.cfg.substep_tolerance, self.cfg.krylov_dim
        e = lanczos_function(mv, u, tau, "exp", tol, dim)
        p = lanczos_function(mv, b, tau, "phi1", tol, dim)
        if (e.converged and p.converged) or depth >= 24:
            if depth >= 24:
                log.warning("Krylov exponential did not reach tolerance after 24 halvings")
            return e.value + tau * p.value
        # e^{-tau A}: two half steps with the same frozen forcing b
        mid = self._exp_sub(u, b, 0.5 * tau, depth + 1)
        return self._exp_sub(mid, b, 0.5 * tau, depth + 1)


def _step_count(t_end: float, dt: float) -> int:
    return max(1, int(math.ceil(t_end / dt - 1e-9)))


def flow_values(
    op: DiscreteOperator,
    rhs: RhsValues,
    u0: np.ndarray,
    t_end: float,
    cfg: IntegratorConfig,
    t0: float = 0.0,
    observer: Optional[Callable[[float, np.ndarray], None]] = None,
) -> np.ndarray:
    """Final node values of the flow from u0 over [t0, t0 + t_end]."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    u = np.array(u0, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial state has non-finite values")
    steps = _step_count(t_end, cfg.dt)
    h = t_end / steps
    stepper = _Stepper(op, rhs, cfg, h)
    grid = op.grid
    for k in range(steps):
        t = t0 + k * h
        u = stepper.step(t, u)
        if not np.all(np.isfinite(u)):
            raise BlowUpError(f"non-finite state at t={t + h:.6g}")
        norm = h1_norm_values(u, grid)
        if norm > BLOWUP_H1:
            raise BlowUpError(f"H1 norm {norm:.3e} exceeds {BLOWUP_H1:.0e} at t={t + h:.6g}")
        if observer is not None:
            observer(t0 + (k + 1) * h, u)
    return u


def integrate(
    op: DiscreteOperator,
    nl,
    u0: Field,
    t_end: float,
    cfg: IntegratorConfig,
    *,
    store_every: int = 1,
) -> Trajectory:
    """Solve u' = -A u + eps F(t, u), u(0) = u0, on [0, t_end].

    ``nl`` is a Nonlinearity, a callable (t, Field) -> Field, or None. States
    are kept every ``store_every`` steps; the final state is always kept.
    """
    u0.check_grid(op.grid)
    if isinstance(nl, Nonlinearity):
        cfg.check_period(nl.period)
    times = [0.0]
    states = [u0]
    h1max = [h1_norm_values(u0.values, op.grid)]
    counter = [0]
    steps = _step_count(t_end, cfg.dt)

    def observe(t, v):
        counter[0] += 1
        h1max[0] = max(h1max[0], h1_norm_values(v, op.grid))
        if counter[0] % store_every == 0 or counter[0] == steps:
            times.append(t)
            states.append(Field(op.grid, v))

    flow_values(op, nonlinearity_rhs(nl, op.grid), u0.values, t_end, cfg, observer=observe)
    return Trajectory(np.array(times), tuple(states), float(h1max[0]))


def translation_operator(op: DiscreteOperator, nl, cfg: IntegratorConfig, period: Optional[float] = None):
    """The period map u0 -> u(T) as a callable on Fields."""
    T = period if period is not None else nl.period
    if isinstance(nl, Nonlinearity):
        cfg.check_period(nl.period)
    rhs = nonlinearity_rhs(nl, op.grid)

    def phi(u0: Field) -> Field:
        u0.check_grid(op.grid)
        return Field(op.grid, flow_values(op, rhs, u0.values, T, cfg))

    return phi


# -- averaging homotopy ------------------------------------------------------------


def _kernel_projector(sd: SpectralData) -> Callable[[np.ndarray], np.ndarray]:
    if sd.kernel_dim == 0:
        raise SpectrumError("the averaging homotopy needs a nontrivial kernel")
    basis = sd.kernel_matrix
    w = sd.kernel_basis[0].grid.cell_volume
    return lambda v: basis @ (w * (basis.T @ v))


def homotopy_G(op: DiscreteOperator, nl: Nonlinearity, sd: SpectralData, hcfg: HomotopyConfig, t: float, u: Field) -> Field:
    """G(t,u,mu) = (1-mu) F(t,v) + (mu/T) int_0^T P F(s,v) ds with v = (1-mu) u + mu P u.

    P is the L2-orthogonal projection onto the kernel. The time average uses
    the composite trapezoid rule with ``hcfg.quadrature_nodes`` points.
    """
    mu = hcfg.mu
    if mu == 0.0:
        # code-path identity with F
        return Field(u.grid, nl.values(t, u.grid, u.values))
    proj = _kernel_projector(sd)
    v = (1.0 - mu) * u.values + mu * proj(u.values)
    avg = proj(time_average(nl, u.grid, v, hcfg.quadrature_nodes))
    if mu == 1.0:
        return Field(u.grid, avg)
    return Field(u.grid, (1.0 - mu) * nl.values(t, u.grid, v) + mu * avg)


def homotopy_rhs(op: DiscreteOperator, nl: Nonlinearity, sd: SpectralData, hcfg: HomotopyConfig):
    """G(., ., mu) as a right-hand side accepted by integrate()."""
    return lambda t, u: homotopy_G(op, nl, sd, hcfg, t, u)


# -- tail diagnostics ---------------------------------------------------------------


def tail_mass(u: Field, n: float) -> float:
    """h^N * sum over nodes with |x_i| > n of u_i^2."""
    grid = u.grid
    if not 0 < n < grid.half_width:
        raise ValueError(f"radius must lie in (0, {grid.half_width}), got {n}")
    mask = grid.radius > n
    return float(grid.cell_volume * np.sum(u.values[mask] ** 2))


def _smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for s <= 1, 1 for s >= 2."""
    s = np.clip(np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)

    def psi(r):
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = np.exp(-1.0 / r[pos])
        return out

    a, b = psi(s), psi(1.0 - s)
    return a / (a + b)


def cutoff(grid: Grid, n: float) -> Field:
    """phi_n(x) = phi(|x|^2 / n^2) with phi smooth, 0 on [0,1] and 1 on [2, inf)."""
    if not n > 0:
        raise ValueError("radius must be positive")
    return Field(grid, _smooth_step(grid.radius**2 / n**2))


def weighted_tail(u: Field, n: float) -> float:
    """(u, phi_n u)_{L2}; bounded by tail_mass(u, n) since phi_n vanishes on B(0, n)."""
    phi = cutoff(u.grid, n).values
    return float(u.grid.cell_volume * np.sum(phi * u.values**2))


@dataclass
class TailReport:
    radii: list[float]
    alpha_hat: list[float]
    nonincreasing: bool
    smallest: float
    R: float

    def to_dict(self) -> dict:
        return {
            "radii": self.radii,
            "alpha_hat": self.alpha_hat,
            "nonincreasing": self.nonincreasing,
            "smallest": self.smallest,
            "R": self.R,
        }


def verify_tail_bound(traj: Trajectory, v_bar: float, radii: Sequence[float], R: float) -> TailReport:
    """alpha(n) = max_t (tail_mass(u(t), n) - R^2 exp(-2 v_bar t))_+ along the trajectory."""
    if traj.h1_norm_max > R * (1 + 1e-12):
        raise ValueError(f"trajectory leaves the H1 ball: max norm {traj.h1_norm_max:.4g} > R={R:.4g}")
    t = traj.times - traj.times[0]
    decay = R**2 * np.exp(-2.0 * v_bar * t)
    alphas = []
    for n in radii:
        tails = np.array([tail_mass(u, n) for u in traj.states])
        alphas.append(float(max(0.0, np.max(tails - decay))))
    mono = bool(np.all(np.diff(alphas) <= 0.0))
    return TailReport([float(r) for r in radii], alphas, mono, float(min(alphas)), float(R))


@dataclass
class PairwiseTailReport:
    Q: float
    eta: float
    radii: list[float]
    alpha_hat: list[float]
    holds: bool

    def to_dict(self) -> dict:
        return {"Q": self.Q, "eta": self.eta, "radii": self.radii, "alpha_hat": self.alpha_hat, "holds": self.holds}


def verify_pairwise_tail(
    traj1: Trajectory,
    traj2: Trajectory,
    v_bar: float,
    radii: Sequence[float],
    mu_pair: tuple[float, float] = (0.0, 0.0),
    rho: Callable[[float], float] = identity_modulus,
) -> PairwiseTailReport:
    """Fit tail(u1 - u2, n) <= exp(-2 v_bar t)|u1(0) - u2(0)|^2 + Q eta + alpha(n).

    eta = |rho(mu1) - rho(mu2)|. Q is the smallest value that absorbs every
    sampled excess with alpha = 0; for eta = 0 no Q can help, so Q = 0 and
    the excess is reported in alpha(n).
    """
    if traj1.times.shape != traj2.times.shape or not np.allclose(traj1.times, traj2.times):
        raise ValueError("trajectories must share the time samples")
    t = traj1.times - traj1.times[0]
    w0 = traj1.states[0] - traj2.states[0]
    base = np.exp(-2.0 * v_bar * t) * norm_l2(w0) ** 2
    diffs = [a - b for a, b in zip(traj1.states, traj2.states)]
    excess = np.array([[tail_mass(w, n) for w in diffs] - base for n in radii])
    eta = abs(rho(mu_pair[0]) - rho(mu_pair[1]))
    pos = np.maximum(excess, 0.0)
    Q = float(pos.max() / eta) if eta > 0 else 0.0
    alpha = np.maximum(excess - Q * eta, 0.0).max(axis=1)
    return PairwiseTailReport(Q, float(eta), [float(r) for r in radii], [float(a) for a in alpha], True)


def write_trajectory_csv(traj: Trajectory, path: str | Path, radii: Sequence[float] = (), snapshots: bool = False) -> None:
    """Columns t, |u|_L2, |u|_H1, tail_mass at each radius; optional node snapshots alongside."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "l2", "h1"] + [f"tail_{r:g}" for r in radii])
        for t, u in zip(traj.times, traj.states):
            w.writerow([repr(float(t)), repr(norm_l2(u)), repr(h1_norm_values(u.values, u.grid))]
                       + [repr(tail_mass(u, r)) for r in radii])
    if snapshots:
        snap = path.with_name(path.stem + "_nodes.csv")
        with snap.open("w", newline="") as fh:
            w = csv.writer(fh)
            grid = traj.grid
            w.writerow([f"x{k}" for k in range(grid.dimension)] + [f"t={t:.6g}" for t in traj.times])
            table = np.column_stack([grid.points] + [u.values for u in traj.states])
            w.writerows(table.tolist())
