"""Periodic solutions as fixed points of the period map: Newton-Krylov, continuation, local index."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .evolution import IMEX_CN, BlowUpError, IntegratorConfig, flow_values, integrate, nonlinearity_rhs
from .krylov import arnoldi_eigenvalues, gmres
from .nonlinearity import Nonlinearity
from .resonance import AveragedMap, DegreeResult, LLCertificate, INCONCLUSIVE, brouwer_degree
from .spatial import DiscreteOperator, Field, h1_norm_values, norm_h1
from .spectrum import SpectralData, reconstruct

log = logging.getLogger(__name__)

CONVERGED = "converged"
FAILED = "failed"
UNIT_EIGEN_TOL = 1e-6


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    epsilon_schedule: tuple[float, ...] = (0.01, 0.1, 0.5, 1.0)
    newton_tol: float = 1e-8
    max_newton: int = 25
    gmres_tol: float = 1e-4
    gmres_maxdim: int = 60
    apriori_R0: float = np.inf
    fd_step: float = 1e-6
    dt: float = 1.0 / 64.0
    scheme: str = IMEX_CN
    arnoldi_maxdim: int = 60
    arnoldi_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        sched = tuple(float(e) for e in self.epsilon_schedule)
        object.__setattr__(self, "epsilon_schedule", sched)
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("epsilon_schedule must be strictly increasing")
        if sched and not (sched[0] > 0 and sched[-1] <= 1.0):
            raise ValueError("epsilon_schedule must lie in (0, 1]")
        if not self.apriori_R0 > 0:
            raise ValueError("apriori_R0 must be positive")

    def integrator(self, epsilon: float) -> IntegratorConfig:
        return IntegratorConfig(self.dt, self.scheme, epsilon)


@dataclass
class PeriodicReport:
    status: str
    fixed_point: Field
    residual: float
    epsilon: float
    iterations: int = 0
    h1_norm: float = float("nan")
    index_local: Optional[int] = None
    monodromy_unit_eigen: bool = False
    monodromy_leading_eigs: list[complex] = field(default_factory=list)
    apriori_ok: bool = True
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "epsilon": self.epsilon,
            "residual": self.residual,
            "h1_norm": self.h1_norm,
            "iterations": self.iterations,
            "index_local": self.index_local,
            "monodromy_unit_eigen": self.monodromy_unit_eigen,
            "monodromy_leading_eigs": [[float(np.real(z)), float(np.imag(z))] for z in self.monodromy_leading_eigs],
            "apriori_ok": self.apriori_ok,
            "message": self.message,
        }


class _PeriodMap:
    """u -> Phi_T(u) on node values, with evaluation counting."""

    def __init__(self, op: DiscreteOperator, nl: Nonlinearity, cfg: SolveConfig, epsilon: float):
        self.op = op
        self.period = nl.period
        self.icfg = cfg.integrator(epsilon)
        self.icfg.check_period(nl.period)
        self.rhs = nonlinearity_rhs(nl, op.grid)
        self.calls = 0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        self.calls += 1
        return flow_values(self.op, self.rhs, u, self.period, self.icfg)


def find_periodic(
    op: DiscreteOperator,
    nl: Nonlinearity,
    sd: Optional[SpectralData],
    cfg: SolveConfig,
    u0_guess: Field,
    epsilon: float,
) -> PeriodicReport:
    """Newton-Krylov on r(u) = u - Phi_T(u).

    J v = v - (Phi_T(u + s v) - Phi_T(u)) / s with s = fd_step (1 + |u|_L2) / |v|_L2;
    the correction solves J d = -r by restarted GMRES and is damped by
    backtracking on |r|_H1. Convergence is |r|_H1 <= newton_tol, confirmed by
    a fresh integration of the period map.
    """
    grid = op.grid
    u0_guess.check_grid(grid)
    if not np.all(np.isfinite(u0_guess.values)):
        raise ValueError("initial guess has non-finite values")
    phi = _PeriodMap(op, nl, cfg, epsilon)
    w = grid.cell_volume

    def l2(v):
        return float(np.sqrt(w * np.dot(v, v)))

    u = u0_guess.values.copy()
    try:
        pu = phi(u)
        r = u - pu
        res = h1_norm_values(r, grid)
        for it in range(cfg.max_newton + 1):
            if res <= cfg.newton_tol:
                confirm = h1_norm_values(u - phi(u), grid)
                if confirm <= cfg.newton_tol:
                    uf = Field(grid, u)
                    return PeriodicReport(CONVERGED, uf, confirm, epsilon, it, norm_h1(uf))
                res = confirm
            if it == cfg.max_newton:
                break
            base = pu
            unorm = l2(u)

            def jv(v, u=u, base=base, unorm=unorm):
                vn = l2(v)
                if vn == 0.0:
                    return np.zeros_like(v)
                s = cfg.fd_step * (1.0 + unorm) / vn
                return v - (phi(u + s * v) - base) / s

            delta, info = gmres(jv, -r, tol=cfg.gmres_tol, restart=cfg.gmres_maxdim, max_restarts=5)
            if not info.converged and info.residual > 0.5 * np.linalg.norm(r):
                return PeriodicReport(
                    FAILED, Field(grid, u), res, epsilon, it, norm_h1(Field(grid, u)),
                    message=f"GMRES stagnated at relative residual {info.residual / np.linalg.norm(r):.2e}",
                )
            lam = 1.0
            while True:
                trial = u + lam * delta
                pt = phi(trial)
                rt = trial - pt
                rest = h1_norm_values(rt, grid)
                if rest < (1.0 - 1e-4 * lam) * res or lam < 1.0 / 64.0:
                    break
                lam *= 0.5
            if rest >= res:
                return PeriodicReport(
                    FAILED, Field(grid, u), res, epsilon, it, norm_h1(Field(grid, u)),
                    message="line search could not reduce the residual",
                )
            u, pu, r, res = trial, pt, rt, rest
            log.debug("eps=%g newton %d: |r|_H1=%.3e (step %.3g)", epsilon, it + 1, res, lam)
    except BlowUpError as exc:
        return PeriodicReport(FAILED, u0_guess, np.inf, epsilon, 0, message=f"blow-up: {exc}")
    return PeriodicReport(
        FAILED, Field(grid, u), res, epsilon, cfg.max_newton, norm_h1(Field(grid, u)),
        message=f"max_newton={cfg.max_newton} exceeded",
    )


def verify_periodic_orbit(op: DiscreteOperator, nl: Nonlinearity, cfg: SolveConfig, report: PeriodicReport) -> float:
    """|u(T) - u(0)|_H1 along a stored trajectory started at the fixed point."""
    traj = integrate(op, nl, report.fixed_point, nl.period, cfg.integrator(report.epsilon))
    return norm_h1(traj.final - traj.states[0])


def reverify_half_step(
    op: DiscreteOperator, nl: Nonlinearity, sd: Optional[SpectralData], cfg: SolveConfig, report: PeriodicReport
) -> tuple[PeriodicReport, float]:
    """Re-solve at dt/2 from u*; returns the new report and the H1 distance between the two fixed points."""
    half = SolveConfig(**{**cfg.__dict__, "dt": cfg.dt / 2.0})
    rep2 = find_periodic(op, nl, sd, half, report.fixed_point, report.epsilon)
    return rep2, norm_h1(rep2.fixed_point - report.fixed_point)


# -- continuation ------------------------------------------------------------------


def lifted_zeros(am: AveragedMap, radius: float) -> list[Field]:
    """Zeros of the averaged map in B(0, radius), lifted to fields in the kernel."""
    deg = brouwer_degree(am, radius, am.dim)
    return [reconstruct(am.spectral, z.coords) for z in sorted(deg.zeros, key=lambda z: np.linalg.norm(z.coords))]


def continue_in_epsilon(
    op: DiscreteOperator,
    nl: Nonlinearity,
    sd: SpectralData,
    cfg: SolveConfig,
    certificate: LLCertificate | DegreeResult | None,
    predictor_radius: Optional[float] = None,
) -> list[PeriodicReport]:
    """Follow the fixed point along cfg.epsilon_schedule.

    Requires a Landesman-Lazer certificate or a nonzero degree. The first
    solve starts from the zero of the averaged map lifted to the kernel; each
    later one is warm-started. A failed step is retried from the lifted zeros
    and from 0; if those fail too, an inconclusive report ends the run. A
    fixed point with |u*|_H1 >= apriori_R0 is reported with apriori_ok=False
    and ends the run.
    """
    if certificate is None:
        raise PreconditionError("continuation needs a Landesman-Lazer or degree certificate")
    if isinstance(certificate, LLCertificate) and certificate.condition == INCONCLUSIVE:
        raise PreconditionError("the Landesman-Lazer check is inconclusive")
    if isinstance(certificate, DegreeResult) and not certificate.degree:
        raise PreconditionError(f"degree certificate is {certificate.degree}, not a nonzero integer")
    am = AveragedMap(sd, nl)
    if predictor_radius is None:
        predictor_radius = certificate.radius if isinstance(certificate, DegreeResult) else 4.0
    starts = lifted_zeros(am, predictor_radius)
    zero = Field(op.grid, np.zeros(op.grid.size))
    guess = starts[0] if starts else zero
    reports: list[PeriodicReport] = []
    for eps in cfg.epsilon_schedule:
        rep = find_periodic(op, nl, sd, cfg, guess, eps)
        if not rep.converged:
            for alt in starts + [zero]:
                rep = find_periodic(op, nl, sd, cfg, alt, eps)
                if rep.converged:
                    break
        if not rep.converged:
            rep.status = INCONCLUSIVE
            rep.message = f"branch lost at epsilon={eps}: {rep.message}"
            reports.append(rep)
            return reports
        rep.apriori_ok = bool(rep.h1_norm < cfg.apriori_R0)
        reports.append(rep)
        if not rep.apriori_ok:
            rep.message = f"|u*|_H1={rep.h1_norm:.4g} >= R0={cfg.apriori_R0:.4g}"
            return reports
        guess = rep.fixed_point
    return reports


def averaging_distance(sd: SpectralData, report: PeriodicReport, zero_coords) -> float:
    """H1 distance from u* to the lifted zero of the averaged map."""
    return norm_h1(report.fixed_point - reconstruct(sd, zero_coords))


# -- local fixed-point index ------------------------------------------------------------


@dataclass
class MonodromySpectrum:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    converged: bool


def monodromy_eigenvalues(
    op: DiscreteOperator, nl: Nonlinearity, cfg: SolveConfig, u: Field, epsilon: float, threshold: float = 1.0 - 1e-3
) -> MonodromySpectrum:
    """Eigenvalues of D Phi_T(u) with modulus above ``threshold``.

    Arnoldi on the central-difference action
    (Phi(u + s w) - Phi(u - s w)) / (2 s) |v|, w = v / |v|_L2, s = fd_step (1 + |u|_L2).
    """
    phi = _PeriodMap(op, nl, cfg, epsilon)
    grid = op.grid
    wgt = grid.cell_volume
    base = u.values
    s = cfg.fd_step * (1.0 + float(np.sqrt(wgt * base @ base)))

    def mv(v):
        vn = float(np.sqrt(wgt * v @ v))
        if vn == 0.0:
            return np.zeros_like(v)
        d = v / vn
        return vn * (phi(base + s * d) - phi(base - s * d)) / (2.0 * s)

    rng = np.random.default_rng(cfg.seed)
    theta, res, ok = arnoldi_eigenvalues(
        mv, rng.standard_normal(grid.size), cfg.arnoldi_maxdim, select=lambda z: np.abs(z) > threshold, tol=cfg.arnoldi_tol
    )
    keep = np.abs(theta) > threshold
    order = np.argsort(-np.abs(theta[keep]))
    return MonodromySpectrum(theta[keep][order], res[keep][order], bool(ok))


def local_index(op: DiscreteOperator, nl: Nonlinearity, cfg: SolveConfig, report: PeriodicReport) -> Optional[int]:
    """sign det(I - D Phi_T(u*)) = (-1)^nu, nu = number of real eigenvalues above 1.

    Returns None (undefined) when an eigenvalue lies within 1e-6 of 1. Fills
    the monodromy fields of ``report`` in place.
    """
    if not report.converged:
        raise ValueError("local index needs a converged report")
    spec = monodromy_eigenvalues(op, nl, cfg, report.fixed_point, report.epsilon)
    if not spec.converged:
        raise RuntimeError("Arnoldi did not resolve the monodromy eigenvalues near the unit circle")
    ev = spec.eigenvalues
    report.monodromy_leading_eigs = [complex(z) for z in ev]
    report.monodromy_unit_eigen = bool(np.any(np.abs(ev - 1.0) < UNIT_EIGEN_TOL))
    if report.monodromy_unit_eigen:
        report.index_local = None
        return None
    real = np.abs(ev.imag) <= 1e-8 * np.maximum(1.0, np.abs(ev))
    nu = int(np.sum(real & (ev.real > 1.0)))
    report.index_local = -1 if nu % 2 else 1
    return report.index_local


def index_formula_prediction(m_minus: int, degree: int, kernel_dim: int = 0, translation_convention: bool = False) -> int:
    """(-1)^{m_-} deg; with ``translation_convention`` the extra (-1)^{dim N} that
    relates the index of the kernel translation map to deg(averaged map)."""
    sign = (-1) ** m_minus
    if translation_convention:
        sign *= (-1) ** kernel_dim
    return sign * degree


def fixed_points_in_ball(
    op: DiscreteOperator,
    nl: Nonlinearity,
    sd: SpectralData,
    cfg: SolveConfig,
    epsilon: float,
    radius: float,
) -> list[PeriodicReport]:
    """Fixed points of Phi_T^(eps) seeded from every zero of the averaged map in B(0, radius),
    deduplicated, each with its local index."""
    am = AveragedMap(sd, nl)
    found: list[PeriodicReport] = []
    for guess in lifted_zeros(am, radius):
        rep = find_periodic(op, nl, sd, cfg, guess, epsilon)
        if not rep.converged:
            continue
        if any(norm_h1(rep.fixed_point - f.fixed_point) < 1e-6 for f in found):
            continue
        local_index(op, nl, cfg, rep)
        found.append(rep)
    return found


def convergence_regression(
    op: DiscreteOperator,
    nl: Nonlinearity,
    sd: SpectralData,
    cfg: SolveConfig,
    ns: Sequence[int] = (1, 2, 4, 8),
    predictor_radius: float = 4.0,
) -> dict:
    """Periodic solutions of u' = -A u + F/n against the n -> infinity limit.

    The limit u_0 is the linear flow from the lifted zero of the averaged map,
    which stays put because it lies in the kernel. Returns the deviations
    sup_{t in [T/4, 3T/4]} |u_n(t) - u_0(t)|_H1 and successive ratios.
    """
    am = AveragedMap(sd, nl)
    starts = lifted_zeros(am, predictor_radius)
    if not starts:
        raise RuntimeError("the averaged map has no zero to anchor the limit")
    u_lim = starts[0]
    T = nl.period
    zero_cfg = cfg.integrator(0.0)
    limit_traj = integrate(op, None, u_lim, T, zero_cfg)
    devs = []
    guess = u_lim
    for n in ns:
        scaled = nl.scaled(1.0 / n)
        rep = find_periodic(op, scaled, sd, cfg, guess, 1.0)
        if not rep.converged:
            raise RuntimeError(f"no periodic solution found for n={n}: {rep.message}")
        traj = integrate(op, scaled, rep.fixed_point, T, cfg.integrator(1.0))
        window = (traj.times >= T / 4 - 1e-12) & (traj.times <= 3 * T / 4 + 1e-12)
        dev = max(
            norm_h1(a - b) for a, b, keep in zip(traj.states, limit_traj.states, window) if keep
        )
        devs.append(dev)
    ratios = [a / b if b > 0 else np.inf for a, b in zip(devs, devs[1:])]
    return {"n": list(ns), "deviation": devs, "ratios": ratios}


def write_fixed_point_csv(report: PeriodicReport, path: str | Path) -> None:
    """Node coordinates and u* values."""
    grid = report.fixed_point.grid
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(grid.dimension)] + ["u"])
        for p, v in zip(grid.points, report.fixed_point.values):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
