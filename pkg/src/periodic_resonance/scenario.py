"""Scenario configuration: parsing, validation with field paths, and built-in scenarios.

Lengths are in domain units. Times (dt) are in units of the period T.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import spatial
from .nonlinearity import (
    BOUNDED_FUNCTIONS,
    TIME_FACTORS,
    Nonlinearity,
    Profile,
    make_composite_separable,
    make_separable,
    profile,
    zero_nonlinearity,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

ANALYSES = (
    "spectrum",
    "ll_check",
    "degree",
    "averaging_check",
    "tail_check",
    "periodic_solve",
    "index_check",
    "convergence_regression",
)

# analysis -> analyses whose outputs it consumes
DEPENDENCIES = {
    "spectrum": (),
    "ll_check": ("spectrum",),
    "degree": ("spectrum",),
    "averaging_check": ("spectrum", "degree"),
    "tail_check": ("spectrum",),
    "periodic_solve": ("spectrum", "ll_check", "degree"),
    "index_check": ("spectrum", "degree"),
    "convergence_regression": ("spectrum",),
}


class ConfigError(ValueError):
    """Configuration problems; ``errors`` lists 'path: message' strings."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# -- spec strings "name(arg, ...)" and "c*name(...)" --------------------------------

_CALL = re.compile(r"^\s*(?:(?P<scale>[-+0-9.eE]+)\s*\*\s*)?(?P<name>[a-z_0-9]+)\s*(?:\((?P<args>[^()]*)\))?\s*$")


def parse_call(text: str) -> tuple[float, str, list[float]]:
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"cannot parse {text!r}; expected name(args) or c*name(args)")
    args = [float(a) for a in m.group("args").split(",")] if m.group("args") and m.group("args").strip() else []
    scale = float(m.group("scale")) if m.group("scale") else 1.0
    return scale, m.group("name"), args


POTENTIALS = {
    "poschl_teller": (1, lambda lam: spatial.poschl_teller(lam)),
    "constant": (1, lambda c: spatial.constant(c)),
    "gaussian": (2, lambda a, s: spatial.gaussian(a, s)),
    "zero": (0, lambda: spatial.constant(0.0)),
}

PROFILE_ARGS = {"zero": 0, "constant": 1, "sech": 0, "sech2": 0, "sech_tanh": 0, "gaussian": 2}


def build_potential(text: str, base_dir: Path | None = None):
    """A potential callable of points, or ('file', path) for tabulated node values."""
    if text.startswith("file:"):
        p = Path(text[5:])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return ("file", p)
    scale, name, args = parse_call(text)
    if name not in POTENTIALS:
        raise ValueError(f"unknown potential {name!r}; known: {sorted(POTENTIALS)}")
    nargs, make = POTENTIALS[name]
    if len(args) != nargs:
        raise ValueError(f"{name} takes {nargs} argument(s), got {len(args)}")
    fn = make(*args)
    return fn if scale == 1.0 else (lambda x, f=fn: scale * f(x))


def build_profile(text: str) -> Profile:
    scale, name, args = parse_call(text)
    if name not in PROFILE_ARGS:
        raise ValueError(f"unknown profile {name!r}; known: {sorted(PROFILE_ARGS)}")
    if len(args) != PROFILE_ARGS[name]:
        raise ValueError(f"{name} takes {PROFILE_ARGS[name]} argument(s), got {len(args)}")
    p = profile(name, *args)
    return p if scale == 1.0 else p * scale


def build_nonlinearity(spec: dict, period: float) -> Nonlinearity:
    family = spec.get("family", "separable")
    theta = float(spec.get("holder_theta", 0.5))
    if family == "separable":
        nl = make_separable(
            build_profile(spec.get("c", "zero")), spec.get("g", "tanh"), build_profile(spec.get("d", "zero")), period, theta
        )
    elif family == "composite":
        nl = make_composite_separable(
            build_profile(spec.get("U", "zero")),
            spec.get("U_time", "one"),
            build_profile(spec.get("W", "zero")),
            spec.get("W_time", "one"),
            spec.get("g", "tanh"),
            period,
            theta,
        )
    elif family == "zero":
        nl = zero_nonlinearity(period)
    else:
        raise ValueError(f"unknown nonlinearity family {family!r}")
    if spec.get("negate", False):
        nl = nl.negated()
    return nl


# -- defaults and validation ----------------------------------------------------------

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "period": 1.0,
    "analyses": ["spectrum"],
    "grid": {"dimension": 1, "half_width": 20.0, "points_per_axis": 2049},
    "diffusion": {"matrix": None},
    "potential": {"v0": "poschl_teller(2)", "vinf": "constant(1)", "v_bar": 1.0},
    "nonlinearity": {"family": "separable", "c": "sech2", "g": "tanh", "d": "0.1*sech", "negate": False},
    "integrator": {"dt": 1.0 / 64.0, "scheme": "IMEX_CN"},
    "spectrum": {"count": 16, "recenter": True, "zero_tol": None},
    "resonance": {
        "time_nodes": 64,
        "directions": 64,
        "sign_radii": [0.5, 1.0, 2.0, 4.0, 8.0],
        "degree_radius_factors": [2.0, 4.0],
    },
    "solve": {
        "epsilon_schedule": [0.01, 0.1, 0.5, 1.0],
        "newton_tol": 1e-8,
        "max_newton": 25,
        "gmres_tol": 1e-4,
        "gmres_maxdim": 60,
        "apriori_R0": None,
        "fd_step": 1e-6,
    },
    "index": {"epsilon": 0.01},
    "averaging": {"epsilon": 0.01},
    "tail": {"radii": [5.0, 10.0, 15.0], "t_end": 2.0, "initial_amplitude": 0.1},
    "convergence": {"ns": [1, 2, 4, 8]},
    "output": {"csv": True},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _check(errors: list[str], path: str, ok: bool, msg: str) -> None:
    if not ok:
        errors.append(f"{path}: {msg}")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def validate_config(raw: dict) -> dict:
    """Merge defaults and check every field; raises ConfigError listing all problems."""
    errors: list[str] = []
    known = set(DEFAULTS) | {"name", "description"}
    for k in raw:
        _check(errors, k, k in known, "unknown key")
    for sect, val in raw.items():
        if isinstance(DEFAULTS.get(sect), dict):
            if not isinstance(val, dict):
                errors.append(f"{sect}: expected a table")
                continue
            for k in val:
                _check(errors, f"{sect}.{k}", k in DEFAULTS[sect] or sect == "nonlinearity", "unknown key")
    if errors:
        raise ConfigError(errors)
    cfg = _merge(DEFAULTS, raw)
    cfg.setdefault("name", "scenario")

    _check(errors, "seed", isinstance(cfg["seed"], int) and not isinstance(cfg["seed"], bool), "expected an integer")
    _check(errors, "period", _is_num(cfg["period"]) and cfg["period"] > 0, "expected a positive number")
    an = cfg["analyses"]
    if not isinstance(an, list):
        errors.append("analyses: expected a list")
    else:
        for i, a in enumerate(an):
            _check(errors, f"analyses[{i}]", a in ANALYSES, f"unknown analysis {a!r}; known: {list(ANALYSES)}")

    g = cfg["grid"]
    _check(errors, "grid.dimension", g["dimension"] in (1, 2), "expected 1 or 2")
    _check(errors, "grid.half_width", _is_num(g["half_width"]) and g["half_width"] > 0, "expected a positive number")
    _check(
        errors, "grid.points_per_axis",
        isinstance(g["points_per_axis"], int) and g["points_per_axis"] >= spatial.MIN_POINTS_PER_AXIS,
        f"expected an integer >= {spatial.MIN_POINTS_PER_AXIS}",
    )
    mat = cfg["diffusion"]["matrix"]
    if mat is not None:
        try:
            spatial.DiffusionMatrix(np.asarray(mat, dtype=float))
        except (ValueError, TypeError) as exc:
            errors.append(f"diffusion.matrix: {exc}")
    pot = cfg["potential"]
    for key in ("v0", "vinf"):
        try:
            build_potential(str(pot[key]))
        except ValueError as exc:
            errors.append(f"potential.{key}: {exc}")
    _check(errors, "potential.v_bar", _is_num(pot["v_bar"]) and pot["v_bar"] > 0, "expected a positive number")
    try:
        build_nonlinearity(cfg["nonlinearity"], float(cfg["period"]) if _is_num(cfg["period"]) else 1.0)
    except (ValueError, KeyError) as exc:
        errors.append(f"nonlinearity: {exc}")
    nlc = cfg["nonlinearity"]
    for key in ("U_time", "W_time"):
        if key in nlc:
            _check(errors, f"nonlinearity.{key}", nlc[key] in TIME_FACTORS, f"expected one of {list(TIME_FACTORS)}")
    if "g" in nlc:
        _check(errors, "nonlinearity.g", nlc["g"] in BOUNDED_FUNCTIONS, f"expected one of {sorted(BOUNDED_FUNCTIONS)}")

    it = cfg["integrator"]
    _check(errors, "integrator.dt", _is_num(it["dt"]) and 0 < it["dt"] <= 1.0 / 16.0, "expected 0 < dt <= 1/16 (period units)")
    _check(errors, "integrator.scheme", it["scheme"] in ("IMEX_CN", "EXP_EULER"), "expected IMEX_CN or EXP_EULER")
    sp_ = cfg["spectrum"]
    _check(errors, "spectrum.count", isinstance(sp_["count"], int) and sp_["count"] >= 1, "expected a positive integer")
    _check(errors, "spectrum.zero_tol", sp_["zero_tol"] is None or (_is_num(sp_["zero_tol"]) and sp_["zero_tol"] > 0), "expected a positive number")
    rs = cfg["resonance"]
    _check(errors, "resonance.time_nodes", isinstance(rs["time_nodes"], int) and rs["time_nodes"] >= 16, "expected an integer >= 16")
    radii = rs["sign_radii"]
    _check(
        errors, "resonance.sign_radii",
        isinstance(radii, list) and radii and all(_is_num(r) and r > 0 for r in radii)
        and all(b > a for a, b in zip(radii, radii[1:])),
        "expected an ascending list of positive radii",
    )
    sv = cfg["solve"]
    sched = sv["epsilon_schedule"]
    _check(
        errors, "solve.epsilon_schedule",
        isinstance(sched, list) and sched and all(_is_num(e) for e in sched)
        and all(b > a for a, b in zip(sched, sched[1:])) and 0 < sched[0] and sched[-1] <= 1,
        "expected a strictly increasing list in (0, 1]",
    )
    _check(errors, "solve.newton_tol", _is_num(sv["newton_tol"]) and sv["newton_tol"] > 0, "expected a positive number")
    _check(errors, "solve.apriori_R0", sv["apriori_R0"] is None or (_is_num(sv["apriori_R0"]) and sv["apriori_R0"] > 0), "expected a positive number")
    for sect in ("index", "averaging"):
        e = cfg[sect]["epsilon"]
        _check(errors, f"{sect}.epsilon", _is_num(e) and 0 < e <= 1, "expected a number in (0, 1]")
    tl = cfg["tail"]
    _check(
        errors, "tail.radii",
        isinstance(tl["radii"], list) and all(_is_num(r) and 0 < r < g.get("half_width", 0) for r in tl["radii"]),
        "expected radii inside (0, grid.half_width)",
    )
    ns = cfg["convergence"]["ns"]
    _check(errors, "convergence.ns", isinstance(ns, list) and all(isinstance(n, int) and n >= 1 for n in ns), "expected positive integers")
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError([f"{path}: file not found"]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    cfg = validate_config(raw)
    cfg["_base_dir"] = str(path.parent)
    return cfg


# -- built-in scenarios -----------------------------------------------------------------

_SECH_TANH = {"family": "separable", "c": "sech2", "g": "tanh", "d": "0.1*sech"}

BUILTIN_SCENARIOS: dict[str, dict] = {
    "pt_lambda1": {
        "description": "V0 = 2 sech^2, kernel sech, no negative eigenvalues",
        "potential": {"v0": "poschl_teller(1)"},
        "nonlinearity": _SECH_TANH,
        "analyses": ["spectrum", "ll_check", "degree", "averaging_check", "index_check"],
    },
    "pt_lambda2": {
        "description": "V0 = 6 sech^2, eigenvalues {-3, 0}, kernel sech*tanh",
        "potential": {"v0": "poschl_teller(2)"},
        "nonlinearity": _SECH_TANH,
        "analyses": ["spectrum", "ll_check", "degree", "averaging_check", "index_check"],
    },
    "pt_lambda2_ll": {
        "description": "full pipeline on the lambda=2 well with f = sech^2 tanh(u) + 0.1 sech sin(2 pi t/T)",
        "potential": {"v0": "poschl_teller(2)"},
        "nonlinearity": _SECH_TANH,
        "analyses": list(ANALYSES),
    },
    "pt_lambda2_neg": {
        "description": "the lambda=2 well with -f: the opposite Landesman-Lazer condition",
        "potential": {"v0": "poschl_teller(2)"},
        "nonlinearity": {**_SECH_TANH, "negate": True},
        "analyses": ["spectrum", "ll_check", "degree", "periodic_solve"],
    },
    "pt_lambda2_composite": {
        "description": "lambda=2 well with f = 0.1 sech^2 sin(2 pi t/T) + atan(sech u)",
        "potential": {"v0": "poschl_teller(2)"},
        "nonlinearity": {"family": "composite", "U": "0.1*sech2", "U_time": "sin", "W": "sech", "W_time": "one", "g": "atan"},
        "analyses": ["spectrum", "ll_check", "degree", "periodic_solve"],
    },
    "no_resonance": {
        "description": "V0 = 3.75 sech^2: eigenvalues -1.25 and 0.75, trivial kernel",
        "potential": {"v0": "poschl_teller(1.5)"},
        "nonlinearity": _SECH_TANH,
        "analyses": ["spectrum", "degree"],
    },
}


def builtin_config(name: str) -> dict:
    if name not in BUILTIN_SCENARIOS:
        raise ConfigError([f"{name}: unknown built-in scenario; known: {sorted(BUILTIN_SCENARIOS)}"])
    raw = copy.deepcopy(BUILTIN_SCENARIOS[name])
    raw["name"] = name
    return validate_config(raw)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    seed: int
    period: float
    analyses: tuple[str, ...]
    grid: spatial.Grid
    operator: spatial.DiscreteOperator
    nonlinearity: Nonlinearity
    config: dict


def _resolve_potential(text: str, grid: spatial.Grid, base_dir: Path | None) -> Callable | np.ndarray:
    pot = build_potential(text, base_dir)
    if isinstance(pot, tuple):
        return spatial.load_node_values(pot[1], grid).values
    return pot


def build_scenario(cfg: dict) -> Scenario:
    """Instantiate grid, operator and nonlinearity from a validated config."""
    g = cfg["grid"]
    grid = spatial.build_grid(g["dimension"], float(g["half_width"]), g["points_per_axis"])
    mat = cfg["diffusion"]["matrix"]
    a = spatial.DiffusionMatrix.identity(grid.dimension) if mat is None else spatial.DiffusionMatrix(np.asarray(mat, float))
    if a.dimension != grid.dimension:
        raise ConfigError([f"diffusion.matrix: expected a {grid.dimension}x{grid.dimension} matrix"])
    base = Path(cfg["_base_dir"]) if cfg.get("_base_dir") else None
    pot = cfg["potential"]
    try:
        op = spatial.assemble_operator(
            grid, a, _resolve_potential(pot["v0"], grid, base), _resolve_potential(pot["vinf"], grid, base), float(pot["v_bar"])
        )
    except (ValueError, OSError) as exc:
        raise ConfigError([f"potential: {exc}"]) from exc
    nl = build_nonlinearity(cfg["nonlinearity"], float(cfg["period"]))
    # dependency closure, in canonical order
    wanted = set(cfg["analyses"])
    changed = True
    while changed:
        changed = False
        for an in list(wanted):
            for dep in DEPENDENCIES[an]:
                if dep not in wanted:
                    wanted.add(dep)
                    changed = True
    ordered = tuple(a for a in ANALYSES if a in wanted)
    return Scenario(cfg["name"], cfg["seed"], float(cfg["period"]), ordered, grid, op, nl, cfg)
