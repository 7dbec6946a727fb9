"""Command-line scenario runner.

    periodic-resonance run <config.toml | builtin name>
    periodic-resonance validate <config.toml>
    periodic-resonance list-builtins

Reports go to $PERIODIC_RESONANCE_OUT (default ./reports). Exit codes:
0 success or partial success, 1 configuration error, 2 hard failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import evolution, nonlinearity, periodic, resonance, scenario, spectrum
from .spatial import Field, norm_h1

log = logging.getLogger("periodic_resonance")

OUTPUT_ENV = "PERIODIC_RESONANCE_OUT"
SIGNIFICANT_DIGITS = 12


class AnalysisError(RuntimeError):
    pass


# -- serialization ----------------------------------------------------------------------


def round_floats(obj: Any, digits: int = SIGNIFICANT_DIGITS) -> Any:
    """Recursively round floats to ``digits`` significant digits; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [round_floats(obj.real, digits), round_floats(obj.imag, digits)]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        r = float(f"{x:.{digits}g}")
        return 0.0 if r == 0.0 else r
    return obj


def dumps_report(bundle: dict) -> str:
    return json.dumps(round_floats(bundle), indent=2, sort_keys=True) + "\n"


# -- analyses ---------------------------------------------------------------------------


class Runner:
    """Runs a scenario's analyses in dependency order and collects one bundle."""

    def __init__(self, sc: scenario.Scenario, out_dir: Path | None = None):
        self.sc = sc
        self.cfg = sc.config
        self.out_dir = out_dir
        self.state: dict[str, Any] = {}
        self.results: dict[str, Any] = {}
        self.timeline: list[dict] = []
        self.artifacts: list[str] = []

    # shared helpers
    def _solve_cfg(self, apriori=None) -> periodic.SolveConfig:
        s = self.cfg["solve"]
        it = self.cfg["integrator"]
        return periodic.SolveConfig(
            epsilon_schedule=tuple(s["epsilon_schedule"]),
            newton_tol=s["newton_tol"],
            max_newton=s["max_newton"],
            gmres_tol=s["gmres_tol"],
            gmres_maxdim=s["gmres_maxdim"],
            apriori_R0=apriori if apriori is not None else (s["apriori_R0"] or np.inf),
            fd_step=s["fd_step"],
            dt=it["dt"] * self.sc.period,
            scheme=it["scheme"],
            seed=self.sc.seed,
        )

    def _need(self, key: str):
        if key not in self.state:
            raise AnalysisError(f"prerequisite {key!r} is unavailable")
        return self.state[key]

    def _resonant(self) -> spectrum.SpectralData:
        sd = self._need("sd")
        if sd.kernel_dim == 0:
            raise AnalysisError("no resonance: the kernel of A is trivial")
        return sd

    def _write_csv(self, name: str, writer) -> None:
        if self.out_dir is None or not self.cfg["output"]["csv"]:
            return
        path = self.out_dir / f"{self.sc.name}_{name}.csv"
        writer(path)
        self.artifacts.append(path.name)

    # analyses
    def spectrum(self) -> dict:
        c = self.cfg["spectrum"]
        op = self.sc.operator
        sd = spectrum.compute_low_spectrum(op, c["count"], c["zero_tol"], seed=self.sc.seed)
        raw = sd.to_dict()
        if c["recenter"]:
            op, sd = spectrum.recenter_resonance(op, sd)
        self.state["op"], self.state["sd"] = op, sd
        out = sd.to_dict()
        out["raw_eigenvalues"] = raw["eigenvalues"]
        out["warnings"] = list(sd.warnings)
        out["max_residual"] = float(np.max(sd.residuals))
        return out

    def ll_check(self) -> dict:
        sd = self._resonant()
        rs = self.cfg["resonance"]
        am = resonance.AveragedMap(sd, self.sc.nonlinearity, rs["time_nodes"])
        cert = resonance.ll_check(am, self.sc.grid, max(rs["directions"], 2 * sd.kernel_dim), self.sc.seed)
        self.state["ll"] = cert
        return cert.to_dict()

    def degree(self) -> dict:
        sd = self._resonant()
        rs = self.cfg["resonance"]
        am = resonance.AveragedMap(sd, self.sc.nonlinearity, rs["time_nodes"])
        if am.dim > 3:
            raise AnalysisError(f"kernel dimension {am.dim} exceeds 3")
        sign = resonance.sphere_sign_check(am, rs["sign_radii"], rs["directions"], self.sc.seed)
        out = {"sphere_sign": sign.to_dict(), "degrees": []}
        if sign.R0_hat is None:
            raise AnalysisError("no uniform sphere sign over the configured radii")
        for fac in rs["degree_radius_factors"]:
            d = resonance.brouwer_degree(am, fac * sign.R0_hat, am.dim)
            out["degrees"].append(d.to_dict())
        first = resonance.brouwer_degree(am, rs["degree_radius_factors"][0] * sign.R0_hat, am.dim)
        self.state["degree"] = first
        self.state["R0_hat"] = sign.R0_hat
        out["degree"] = first.degree
        out["certificate"] = resonance.certificate_json(self.state.get("ll"), first)
        return out

    def _apriori(self) -> float:
        if self.cfg["solve"]["apriori_R0"] is not None:
            return float(self.cfg["solve"]["apriori_R0"])
        return 4.0 * self._need("R0_hat")

    def averaging_check(self) -> dict:
        sd = self._resonant()
        deg = self._need("degree")
        op = self._need("op")
        if not deg.zeros:
            raise AnalysisError("the averaged map has no zero in the ball")
        eps = self.cfg["averaging"]["epsilon"]
        cfg = self._solve_cfg()
        zero = min(deg.zeros, key=lambda z: np.linalg.norm(z.coords)).coords
        guess = spectrum.reconstruct(sd, zero)
        out = {"epsilon": eps, "zero_coords": zero.tolist(), "runs": []}
        for e in (eps, eps / 2):
            rep = periodic.find_periodic(op, self.sc.nonlinearity, sd, cfg, guess, e)
            if not rep.converged:
                raise AnalysisError(f"solve failed at epsilon={e}: {rep.message}")
            dist = periodic.averaging_distance(sd, rep, zero)
            out["runs"].append({"epsilon": e, "distance_h1": dist, "within_10_eps": dist <= 10 * e})
        d1, d2 = out["runs"][0]["distance_h1"], out["runs"][1]["distance_h1"]
        out["halving_ratio"] = d1 / d2 if d2 > 0 else None
        return out

    def tail_check(self) -> dict:
        sd = self._need("sd")
        op = self._need("op")
        tl = self.cfg["tail"]
        grid = self.sc.grid
        T = self.sc.period
        nl = self.sc.nonlinearity
        # a bounded trajectory: start near the eps = 1 periodic orbit, with the
        # perturbation kept off the unstable and neutral directions
        base = periodic.find_periodic(op, nl, sd, self._solve_cfg(), grid.zeros(), 1.0)
        if not base.converged:
            raise AnalysisError(f"no periodic orbit to anchor the tail trajectory: {base.message}")
        rng = np.random.default_rng(self.sc.seed)
        bump = Field(grid, nonlinearity.random_bump_field(grid, rng, tl["initial_amplitude"]))
        bump = bump - spectrum.project_negative(sd, bump)
        if sd.kernel_dim:
            bump = bump - spectrum.reconstruct(sd, spectrum.project_kernel(sd, bump))
        u0 = base.fixed_point + bump
        icfg = evolution.IntegratorConfig(self.cfg["integrator"]["dt"] * T, self.cfg["integrator"]["scheme"], 1.0)
        t_end = tl["t_end"] * T
        traj = evolution.integrate(op, nl, u0, t_end, icfg)
        R = traj.h1_norm_max
        single = evolution.verify_tail_bound(traj, op.v_bar_infinity, tl["radii"], R)
        out = {"single": single.to_dict(), "orbit_h1_norm": base.h1_norm}
        self._write_csv("trajectory", lambda p: evolution.write_trajectory_csv(traj, p, tl["radii"]))
        if sd.kernel_dim:
            trajs = []
            for mu in (0.0, 1.0):
                rhs = evolution.homotopy_rhs(op, self.sc.nonlinearity, sd, evolution.HomotopyConfig(mu))
                trajs.append(evolution.integrate(op, rhs, u0, t_end, icfg))
            pair = evolution.verify_pairwise_tail(trajs[0], trajs[1], op.v_bar_infinity, tl["radii"], (0.0, 1.0))
            out["pairwise_mu_0_1"] = pair.to_dict()
        return out

    def periodic_solve(self) -> dict:
        sd = self._resonant()
        op = self._need("op")
        cert = self.state.get("degree")
        if cert is None or not cert.degree:
            cert = self.state.get("ll")
        cfg = self._solve_cfg(self._apriori())
        reps = periodic.continue_in_epsilon(op, self.sc.nonlinearity, sd, cfg, cert, self.state.get("degree") and self.state["degree"].radius)
        if reps and reps[-1].converged:
            self._write_csv("fixed_point", lambda p: periodic.write_fixed_point_csv(reps[-1], p))
        ok = all(r.converged and r.apriori_ok for r in reps) and len(reps) == len(cfg.epsilon_schedule)
        return {"apriori_R0": cfg.apriori_R0, "all_converged": ok, "reports": [r.to_dict() for r in reps]}

    def index_check(self) -> dict:
        sd = self._resonant()
        op = self._need("op")
        deg = self._need("degree")
        if deg.degree is None:
            raise AnalysisError("degree undefined on the configured ball")
        eps = self.cfg["index"]["epsilon"]
        cfg = self._solve_cfg()
        fps = periodic.fixed_points_in_ball(op, self.sc.nonlinearity, sd, cfg, eps, deg.radius)
        indices = [r.index_local for r in fps]
        total = None if any(i is None for i in indices) else int(sum(indices))
        return {
            "epsilon": eps,
            "fixed_points": [r.to_dict() for r in fps],
            "index_sum": total,
            "m_minus": sd.m_minus,
            "kernel_dim": sd.kernel_dim,
            "degree": deg.degree,
            "predicted_signed_degree": periodic.index_formula_prediction(sd.m_minus, deg.degree),
            "predicted_with_kernel_sign": periodic.index_formula_prediction(
                sd.m_minus, deg.degree, sd.kernel_dim, translation_convention=True
            ),
        }

    def convergence_regression(self) -> dict:
        sd = self._resonant()
        op = self._need("op")
        ns = self.cfg["convergence"]["ns"]
        return periodic.convergence_regression(op, self.sc.nonlinearity, sd, self._solve_cfg(), ns)

    def run(self) -> dict:
        for k, name in enumerate(self.sc.analyses):
            missing = [d for d in scenario.DEPENDENCIES[name] if self._status(d) not in ("ok",)]
            entry = {"order": k, "analysis": name}
            try:
                result = getattr(self, name)()
                entry["status"] = "ok"
                self.results[name] = {"status": "ok", **result}
            except (AnalysisError, spectrum.SpectrumError, periodic.PreconditionError, ValueError,
                    RuntimeError, FloatingPointError) as exc:
                entry["status"] = "error"
                msg = str(exc)
                if missing:
                    msg += f" (unmet prerequisites: {', '.join(missing)})"
                self.results[name] = {"status": "error", "error": msg}
                log.warning("%s failed: %s", name, msg)
            self.timeline.append(entry)
        return {
            "scenario": self.sc.name,
            "seed": self.sc.seed,
            "config": {k: v for k, v in self.cfg.items() if not k.startswith("_")},
            "timeline": self.timeline,
            "analyses": self.results,
            "artifacts": self.artifacts,
        }

    def _status(self, name: str) -> str | None:
        r = self.results.get(name)
        return r["status"] if r else None


def run_scenario(cfg: dict, out_dir: Path | None = None) -> dict:
    sc = scenario.build_scenario(cfg)
    return Runner(sc, out_dir).run()


# -- builtins table ----------------------------------------------------------------------


def list_builtins() -> str:
    lines = ["POTENTIALS"]
    lines += [
        "  poschl_teller(lam)   lam*(lam+1)*sech^2(|x|)",
        "  constant(c)          c",
        "  gaussian(A, sigma)   A*exp(-|x|^2/(2 sigma^2))",
        "  zero                 0",
        "  file:<path.csv>      tabulated node values",
        "",
        "PROFILES (c, d, U, W; prefix with a scale as in 0.1*sech)",
        "  zero, constant(c), sech, sech2, sech_tanh, gaussian(A, sigma)",
        "",
        "BOUNDED FUNCTIONS g",
    ]
    for name, g in sorted(nonlinearity.BOUNDED_FUNCTIONS.items()):
        lines.append(f"  {name:<8} lipschitz={g.lipschitz:g} limits=({g.limit_minus:.6g}, {g.limit_plus:.6g})")
    lines += [
        "",
        "NONLINEARITY FAMILIES",
        "  composite(U=..., W=..., g=tanh|clamped|atan)   f = U(x,t) + g(W(x,t) u), time factors one|sin|cos",
        "  separable(c, g, d)                            f = c(x) g(u) + d(x) sin(2 pi t/T)",
        "  zero                                          f = 0",
        "",
        "SCENARIOS",
    ]
    for name, sc in BUILTIN_ORDER():
        lines.append(f"  {name:<20} {sc['description']}")
    lines += ["", "ANALYSES", "  " + ", ".join(scenario.ANALYSES)]
    return "\n".join(lines) + "\n"


def BUILTIN_ORDER():
    return sorted(scenario.BUILTIN_SCENARIOS.items())


# -- entry point --------------------------------------------------------------------------


def _load(target: str) -> dict:
    p = Path(target)
    if p.suffix == ".toml" or p.exists():
        return scenario.load_config(p)
    name = target.removeprefix("builtin:")
    return scenario.builtin_config(name)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="periodic-resonance", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run a scenario file or built-in scenario")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="check a scenario file without running it")
    p_val.add_argument("config")
    sub.add_parser("list-builtins", help="print the built-in potentials, families and scenarios")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.verb == "list-builtins":
        sys.stdout.write(list_builtins())
        return 0
    try:
        cfg = _load(args.config)
        if args.verb == "validate":
            scenario.build_scenario(cfg)
            print(f"{cfg['name']}: configuration is valid")
            return 0
        out_dir = Path(os.environ.get(OUTPUT_ENV, "reports"))
        sc = scenario.build_scenario(cfg)
    except scenario.ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        bundle = Runner(sc, out_dir).run()
        path = out_dir / f"{sc.name}.json"
        path.write_text(dumps_report(bundle))
    except Exception as exc:  # noqa: BLE001 - anything here is a hard failure
        print(f"hard failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(str(path))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
