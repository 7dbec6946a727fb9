"""Bounded T-periodic nonlinearities f(t, x, u), their Nemytskii operators and checks.

A nonlinearity is a vectorized callable ``f(t, x, u)`` where ``t`` is a float,
``x`` has shape (n, N) and ``u`` shape (n,). Growth witnesses (K, L, M) are
callables of ``x`` alone; asymptotic limits are callables of ``(t, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .spatial import Field, Grid, h1_norm_values, norm_h1, norm_l2, sech

FFunction = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
XFunction = Callable[[np.ndarray], np.ndarray]
TXFunction = Callable[[float, np.ndarray], np.ndarray]


def _zero_x(x):
    return np.zeros(x.shape[0])


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    f: FFunction
    period: float
    holder_theta: float = 0.5
    growth_K: XFunction = _zero_x
    growth_L: XFunction = _zero_x
    zero_bound_M: XFunction = _zero_x
    limit_liminf_plus: Optional[TXFunction] = None
    limit_limsup_minus: Optional[TXFunction] = None
    limit_limsup_plus: Optional[TXFunction] = None
    limit_liminf_minus: Optional[TXFunction] = None
    sup_bound: float = np.inf
    operator_C: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")
        if not 0.0 < self.holder_theta < 1.0:
            raise ValueError(f"holder exponent must lie in (0, 1), got {self.holder_theta}")

    @property
    def has_limits(self) -> bool:
        return None not in (
            self.limit_liminf_plus,
            self.limit_limsup_minus,
            self.limit_limsup_plus,
            self.limit_liminf_minus,
        )

    def values(self, t: float, grid: Grid, u: np.ndarray) -> np.ndarray:
        """Pointwise f(t, x_i, u_i) at every node; non-finite output is an error."""
        out = np.asarray(self.f(t, grid.points, u), dtype=float)
        if out.ndim == 0:
            out = np.full(grid.size, float(out))
        if not np.all(np.isfinite(out)):
            node = int(np.flatnonzero(~np.isfinite(out))[0])
            raise FloatingPointError(
                f"{self.name}: f returned {out[node]} at node {node} "
                f"(t={t}, x={grid.points[node].tolist()}, u={u[node]})"
            )
        return out

    def negated(self) -> "Nonlinearity":
        """-f; liminf and limsup trade places under the sign flip."""
        f = self.f

        def neg(t, x, u):
            return -np.asarray(f(t, x, u), dtype=float)

        def flip(g):
            return None if g is None else (lambda t, x: -np.asarray(g(t, x), dtype=float))

        return replace(
            self,
            f=neg,
            limit_liminf_plus=flip(self.limit_limsup_plus),
            limit_limsup_plus=flip(self.limit_liminf_plus),
            limit_limsup_minus=flip(self.limit_liminf_minus),
            limit_liminf_minus=flip(self.limit_limsup_minus),
            zero_bound_M=lambda x, m=self.zero_bound_M: np.abs(m(x)),
            name=f"-({self.name})",
        )

    def scaled(self, factor: float) -> "Nonlinearity":
        """factor * f for factor > 0 (e.g. F/n); witnesses scale along."""
        if not factor > 0:
            raise ValueError("scale factor must be positive; use negated() for sign flips")
        f = self.f

        def sc(g):
            return None if g is None else (lambda *a: factor * np.asarray(g(*a), dtype=float))

        return replace(
            self,
            f=lambda t, x, u: factor * np.asarray(f(t, x, u), dtype=float),
            growth_K=sc(self.growth_K),
            growth_L=sc(self.growth_L),
            zero_bound_M=sc(self.zero_bound_M),
            limit_liminf_plus=sc(self.limit_liminf_plus),
            limit_limsup_minus=sc(self.limit_limsup_minus),
            limit_limsup_plus=sc(self.limit_limsup_plus),
            limit_liminf_minus=sc(self.limit_liminf_minus),
            sup_bound=factor * self.sup_bound,
            operator_C=None if self.operator_C is None else factor * self.operator_C,
            name=f"{factor:g}*({self.name})",
        )

    def operator_constant(self, grid: Grid) -> float:
        """Constant C in |F(t,u)-F(s,v)| <= C(1+|u|_H1)|t-s|^theta + C|u-v|_H1.

        Without an explicit value it follows from the pointwise witnesses:
        C = max(|K|_L2, sup K, sup L).
        """
        if self.operator_C is not None:
            return float(self.operator_C)
        k = np.abs(self.growth_K(grid.points))
        lip = np.abs(self.growth_L(grid.points))
        return float(max(np.sqrt(grid.cell_volume * np.dot(k, k)), k.max(), lip.max()))


def eval_nemytskii(nl: Nonlinearity, t: float, u: Field) -> Field:
    """[F(t, u)](x) = f(t, x, u(x))."""
    if t < 0:
        raise ValueError("time must be non-negative")
    return Field(u.grid, nl.values(t, u.grid, u.values))


def time_average(nl: Nonlinearity, grid: Grid, u: np.ndarray, nodes: int = 64) -> np.ndarray:
    """(1/T) int_0^T f(s, x, u(x)) ds by the composite trapezoid rule on a periodic integrand."""
    ts = nl.period * np.arange(nodes) / nodes
    acc = np.zeros(grid.size)
    for s in ts:
        acc += nl.values(s, grid, u)
    return acc / nodes


# -- bounded scalar functions g ------------------------------------------------


@dataclass(frozen=True)
class BoundedFunction:
    """Bounded Lipschitz g with known limits at -inf and +inf."""

    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    limit_minus: float
    limit_plus: float
    name: str = "g"

    @property
    def sup(self) -> float:
        return max(abs(self.limit_minus), abs(self.limit_plus))

    def __call__(self, s):
        return self.fn(s)


BOUNDED_FUNCTIONS = {
    "tanh": BoundedFunction(np.tanh, 1.0, -1.0, 1.0, "tanh"),
    "atan": BoundedFunction(np.arctan, 1.0, -np.pi / 2, np.pi / 2, "atan"),
    "clamped": BoundedFunction(lambda s: np.clip(s, -1.0, 1.0), 1.0, -1.0, 1.0, "clamped"),
}


# -- spatial profiles with known sup ---------------------------------------------


@dataclass(frozen=True)
class Profile:
    """Callable of x with a known bound sup|p|."""

    fn: XFunction
    sup: float
    name: str = "p"

    def __call__(self, x):
        return np.asarray(self.fn(x), dtype=float)

    def __mul__(self, c: float) -> "Profile":
        return Profile(lambda x, f=self.fn: c * np.asarray(f(x), dtype=float), abs(c) * self.sup, f"{c:g}*{self.name}")

    __rmul__ = __mul__


def profile(name: str, *args: float) -> Profile:
    """Named x-profiles: zero, constant(c), sech, sech2, sech_tanh, gaussian(A, sigma)."""

    def radius(x):
        return np.linalg.norm(x, axis=-1)

    if name == "zero":
        return Profile(_zero_x, 0.0, "zero")
    if name == "constant":
        (c,) = args
        return Profile(lambda x: np.full(x.shape[0], float(c)), abs(c), f"constant({c:g})")
    if name == "sech":
        return Profile(lambda x: sech(radius(x)), 1.0, "sech")
    if name == "sech2":
        return Profile(lambda x: sech(radius(x)) ** 2, 1.0, "sech2")
    if name == "sech_tanh":
        # odd in the first coordinate
        return Profile(lambda x: sech(x[:, 0]) * np.tanh(x[:, 0]), 0.5, "sech_tanh")
    if name == "gaussian":
        a, sigma = args
        return Profile(
            lambda x: a * np.exp(-np.sum(x**2, axis=-1) / (2.0 * sigma**2)), abs(a), f"gaussian({a:g},{sigma:g})"
        )
    raise ValueError(f"unknown profile {name!r}")


TIME_FACTORS = ("one", "sin", "cos")


def _time_factor(kind: str, period: float) -> Callable[[float], float]:
    omega = 2.0 * np.pi / period
    if kind == "one":
        return lambda t: 1.0
    if kind == "sin":
        return lambda t: np.sin(omega * t)
    if kind == "cos":
        return lambda t: np.cos(omega * t)
    raise ValueError(f"unknown time factor {kind!r}; expected one of {TIME_FACTORS}")


def _holder_factor(kind: str, period: float, theta: float) -> float:
    # |sin(wt) - sin(ws)| <= min(2, w|t-s|) <= 2^(1-theta) w^theta |t-s|^theta
    if kind == "one":
        return 0.0
    omega = 2.0 * np.pi / period
    return 2.0 ** (1.0 - theta) * omega**theta


# -- families ----------------------------------------------------------------------


def make_composite(
    U: Callable[[float, np.ndarray], np.ndarray],
    W: Callable[[float, np.ndarray], np.ndarray],
    g: BoundedFunction | str,
    T: float,
    *,
    theta: float = 0.5,
    U_bound: Optional[XFunction] = None,
    W_bound: Optional[XFunction] = None,
    U_holder: Optional[XFunction] = None,
    W_holder: Optional[XFunction] = None,
    time_samples: int = 256,
    name: str = "composite",
) -> Nonlinearity:
    """f(t, x, u) = U(t, x) + g(W(t, x) u) with derived growth witnesses.

    Bounds sup_t|U|, sup_t|W| and the theta-Holder constants in t default to
    estimates from ``time_samples`` equispaced times in [0, T]; pass them
    explicitly when they are known in closed form. The Holder estimate uses
    min(2B, l|dt|) <= (2B)^(1-theta) l^theta |dt|^theta with l the sampled
    Lipschitz constant.
    """
    if isinstance(g, str):
        g = BOUNDED_FUNCTIONS[g]
    g0 = float(np.asarray(g(np.zeros(1)))[0])
    if abs(g0) > 1e-12:
        raise ValueError(f"g(0) must vanish, got {g0}")

    ts = T * np.arange(time_samples) / time_samples
    dt = T / time_samples

    def sampled_bound(fun):
        return lambda x: np.max(np.abs([np.broadcast_to(fun(t, x), (x.shape[0],)) for t in ts]), axis=0)

    def sampled_holder(fun, bound):
        def h(x):
            vals = np.array([np.broadcast_to(fun(t, x), (x.shape[0],)) for t in np.append(ts, T)])
            lip = np.max(np.abs(np.diff(vals, axis=0)), axis=0) / dt
            return (2.0 * bound(x)) ** (1.0 - theta) * lip**theta

        return h

    U_bound = U_bound or sampled_bound(U)
    W_bound = W_bound or sampled_bound(W)
    U_holder = U_holder or sampled_holder(U, U_bound)
    W_holder = W_holder or sampled_holder(W, W_bound)
    lip = g.lipschitz

    def f(t, x, u):
        return U(t, x) + g(W(t, x) * u)

    def limit(sign):
        def lim(t, x):
            w = np.broadcast_to(W(t, x), (x.shape[0],))
            direction = sign * np.sign(w)
            gl = np.where(direction > 0, g.limit_plus, np.where(direction < 0, g.limit_minus, 0.0))
            return U(t, x) + gl

        return lim

    # sup over x of the U bound is not available in closed form for arbitrary
    # callables; sampling on a wide line gives the sup_bound
    probe = np.linspace(-50.0, 50.0, 4001)[:, None]
    return Nonlinearity(
        f=f,
        period=T,
        holder_theta=theta,
        growth_K=lambda x: U_holder(x) + lip * W_holder(x),
        growth_L=lambda x: lip * W_bound(x),
        zero_bound_M=U_bound,
        limit_liminf_plus=limit(+1),
        limit_limsup_plus=limit(+1),
        limit_limsup_minus=limit(-1),
        limit_liminf_minus=limit(-1),
        sup_bound=float(np.max(U_bound(probe))) + g.sup,
        name=name,
    )


def make_composite_separable(
    U_profile: Profile,
    U_time: str,
    W_profile: Profile,
    W_time: str,
    g: BoundedFunction | str,
    T: float,
    theta: float = 0.5,
) -> Nonlinearity:
    """Composite family with U = Ux(x)*tau_U(t), W = Wx(x)*tau_W(t), tau in {one, sin, cos}.

    Here every witness is exact.
    """
    tu, tw = _time_factor(U_time, T), _time_factor(W_time, T)
    hu, hw = _holder_factor(U_time, T, theta), _holder_factor(W_time, T, theta)
    nl = make_composite(
        lambda t, x: U_profile(x) * tu(t),
        lambda t, x: W_profile(x) * tw(t),
        g,
        T,
        theta=theta,
        U_bound=lambda x: np.abs(U_profile(x)),
        W_bound=lambda x: np.abs(W_profile(x)),
        U_holder=lambda x: hu * np.abs(U_profile(x)),
        W_holder=lambda x: hw * np.abs(W_profile(x)),
        name=f"composite(U={U_profile.name}*{U_time}, W={W_profile.name}*{W_time}, g={_gname(g)})",
    )
    gsup = (BOUNDED_FUNCTIONS[g] if isinstance(g, str) else g).sup
    return replace(nl, sup_bound=U_profile.sup + gsup)


def _gname(g) -> str:
    return g if isinstance(g, str) else g.name


def make_separable(
    c: Profile,
    g: BoundedFunction | str,
    d: Profile,
    T: float,
    theta: float = 0.5,
) -> Nonlinearity:
    """f(t, x, u) = c(x) g(u) + d(x) sin(2 pi t / T)."""
    if isinstance(g, str):
        g = BOUNDED_FUNCTIONS[g]
    omega = 2.0 * np.pi / T
    hk = _holder_factor("sin", T, theta)

    def f(t, x, u):
        return c(x) * g(u) + d(x) * np.sin(omega * t)

    def limit(gl):
        return lambda t, x: c(x) * gl + d(x) * np.sin(omega * t)

    return Nonlinearity(
        f=f,
        period=T,
        holder_theta=theta,
        growth_K=lambda x: hk * np.abs(d(x)),
        growth_L=lambda x: g.lipschitz * np.abs(c(x)),
        zero_bound_M=lambda x: np.abs(d(x)),
        limit_liminf_plus=limit(g.limit_plus),
        limit_limsup_plus=limit(g.limit_plus),
        limit_limsup_minus=limit(g.limit_minus),
        limit_liminf_minus=limit(g.limit_minus),
        sup_bound=c.sup * g.sup + d.sup,
        name=f"separable(c={c.name}, g={g.name}, d={d.name})",
    )


def zero_nonlinearity(T: float = 1.0) -> Nonlinearity:
    zero_tx = lambda t, x: np.zeros(x.shape[0])  # noqa: E731
    return Nonlinearity(
        f=lambda t, x, u: np.zeros_like(u, dtype=float),
        period=T,
        limit_liminf_plus=zero_tx,
        limit_limsup_plus=zero_tx,
        limit_limsup_minus=zero_tx,
        limit_liminf_minus=zero_tx,
        sup_bound=0.0,
        name="zero",
    )


# -- asymptotic limits by sampling -------------------------------------------------

LIMIT_PROBES = (1e3, 1e4, 1e5, 1e6)


@dataclass
class LimitEstimate:
    plus: np.ndarray
    minus: np.ndarray
    monotone: bool
    spread: float


def estimate_limits(f: FFunction, t: float, x: np.ndarray) -> LimitEstimate:
    """Fallback for f without closed-form limits: sample f at u = +-1e3..1e6.

    Reports the value at the largest probe and whether the probe sequence is
    monotone at every point; it does not extrapolate.
    """
    def seq(sign):
        return np.array([np.asarray(f(t, x, np.full(x.shape[0], sign * s)), dtype=float) for s in LIMIT_PROBES])

    plus, minus = seq(1.0), seq(-1.0)
    mono = True
    for s in (plus, minus):
        d = np.diff(s, axis=0)
        tol = 1e-12 * (1.0 + np.abs(s).max())
        mono &= bool(np.all(np.all(d >= -tol, axis=0) | np.all(d <= tol, axis=0)))
    spread = float(max(np.ptp(plus, axis=0).max(), np.ptp(minus, axis=0).max()))
    return LimitEstimate(plus[-1], minus[-1], mono, spread)


# -- hypothesis validation -----------------------------------------------------------


@dataclass
class CheckResult:
    passed: bool
    worst_excess: float
    worst_sample: dict = field(default_factory=dict)
    informational: bool = False

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_excess": self.worst_excess,
            "worst_sample": self.worst_sample,
            "informational": self.informational,
        }


@dataclass
class HypothesisReport:
    checks: dict[str, CheckResult]
    sample_count: int
    seed: int

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks.values() if not c.informational)

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
        }


def _worst(excess: np.ndarray, samples: dict, tol: float, informational=False) -> CheckResult:
    k = int(np.argmax(excess))
    sample = {name: np.asarray(v)[k].tolist() for name, v in samples.items()}
    return CheckResult(bool(excess[k] <= tol), float(excess[k]), sample, informational)


def random_bump_field(grid: Grid, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    """Sum of three random Gaussian bumps scaled to the given sup amplitude."""
    out = np.zeros(grid.size)
    for _ in range(3):
        c = rng.uniform(-0.5, 0.5, grid.dimension) * grid.half_width
        w = rng.uniform(0.5, 3.0)
        out += rng.standard_normal() * np.exp(-np.sum((grid.points - c) ** 2, axis=1) / (2 * w * w))
    peak = np.abs(out).max()
    return out * (amplitude / peak if peak > 0 else 0.0)


def validate_hypotheses(nl: Nonlinearity, grid: Grid, sample_count: int = 1000, seed: int = 0) -> HypothesisReport:
    """Monte-Carlo check of periodicity, the zero bound, the Holder-Lipschitz bound,
    boundedness, the operator-level Lipschitz and growth bounds, and the ordering
    of asymptotic limits.

    Pointwise checks draw t, s in [0, 3T], random nodes and u, v with
    log-uniform magnitudes in [1e-2, 1e3]. Operator-level checks use
    max(10, sample_count // 20) random smooth fields.
    """
    if sample_count < 100:
        raise ValueError("sample_count must be >= 100")
    rng = np.random.default_rng(seed)
    T, theta = nl.period, nl.holder_theta
    n = sample_count
    t = rng.uniform(0.0, 3.0 * T, n)
    s = rng.uniform(0.0, 3.0 * T, n)
    idx = rng.integers(0, grid.size, n)
    x = grid.points[idx]

    def mag(size):
        return rng.choice([-1.0, 1.0], size) * 10.0 ** rng.uniform(-2.0, 3.0, size)

    u, v = mag(n), mag(n)
    # a fraction of close pairs probes the local Lipschitz regime
    close = rng.random(n) < 0.5
    v[close] = u[close] + 1e-3 * rng.standard_normal(close.sum())

    def fpt(tt, uu):
        return np.array([float(np.asarray(nl.f(ti, xi[None, :], np.array([ui])))[0]) for ti, xi, ui in zip(tt, x, uu)])

    fu_t = fpt(t, u)
    fu_tT = fpt(t + T, u)
    fv_s = fpt(s, v)
    f0 = fpt(t, np.zeros(n))
    K = np.abs(nl.growth_K(x))
    L = np.abs(nl.growth_L(x))
    M = nl.zero_bound_M(x)
    tol = 1e-12

    checks = {}
    samples = {"t": t, "x": x, "u": u}
    checks["periodicity"] = _worst(
        np.abs(fu_t - fu_tT) - 1e-12 * np.maximum(1.0, np.abs(fu_t)), samples, 0.0
    )
    checks["zero_bound"] = _worst(f0 - M, {"t": t, "x": x}, tol)
    checks["zero_bound_two_sided"] = _worst(np.abs(f0) - M, {"t": t, "x": x}, tol, informational=True)
    bound = K * (1.0 + np.abs(u)) * np.abs(t - s) ** theta + L * np.abs(u - v)
    checks["holder_lipschitz"] = _worst(
        np.abs(fu_t - fv_s) - bound - 1e-12 * np.maximum(1.0, np.abs(fu_t)),
        {"t": t, "s": s, "x": x, "u": u, "v": v},
        0.0,
    )
    checks["bounded"] = _worst(np.abs(fu_t) - nl.sup_bound, samples, tol)

    # operator-level bounds on random fields
    nf = max(10, sample_count // 20)
    C = nl.operator_constant(grid)
    Kg = np.abs(nl.growth_K(grid.points))
    Lg = np.abs(nl.growth_L(grid.points))
    Mg = np.abs(nl.zero_bound_M(grid.points))
    lip_excess, growth_excess = [], []
    lip_samples: dict[str, list] = {"t": [], "s": [], "amplitude": []}
    for _ in range(nf):
        amp = 10.0 ** rng.uniform(-2.0, 3.0)
        uf = random_bump_field(grid, rng, amp)
        vf = uf + random_bump_field(grid, rng, amp * 10.0 ** rng.uniform(-3.0, 0.0))
        ti, si = rng.uniform(0.0, 3.0 * T, 2)
        Fu = nl.values(ti, grid, uf)
        Fv = nl.values(si, grid, vf)
        h1u = h1_norm_values(uf, grid)
        lhs = np.sqrt(grid.cell_volume * np.sum((Fu - Fv) ** 2))
        rhs = C * (1.0 + h1u) * abs(ti - si) ** theta + C * h1_norm_values(uf - vf, grid)
        lip_excess.append(lhs - rhs - 1e-12 * max(1.0, lhs))
        g_ex = np.abs(Fu) - (Lg * np.abs(uf) + (Kg + Mg) * (1.0 + h1u))
        growth_excess.append(float(g_ex.max()))
        lip_samples["t"].append(ti)
        lip_samples["s"].append(si)
        lip_samples["amplitude"].append(amp)
    checks["operator_lipschitz"] = _worst(np.array(lip_excess), lip_samples, 0.0)
    checks["operator_growth"] = _worst(np.array(growth_excess), lip_samples, tol)

    if nl.has_limits:
        lo_p = np.array([float(np.asarray(nl.limit_liminf_plus(ti, xi[None, :]))[0]) for ti, xi in zip(t, x)])
        hi_p = np.array([float(np.asarray(nl.limit_limsup_plus(ti, xi[None, :]))[0]) for ti, xi in zip(t, x)])
        lo_m = np.array([float(np.asarray(nl.limit_liminf_minus(ti, xi[None, :]))[0]) for ti, xi in zip(t, x)])
        hi_m = np.array([float(np.asarray(nl.limit_limsup_minus(ti, xi[None, :]))[0]) for ti, xi in zip(t, x)])
        checks["limit_order"] = _worst(np.maximum(lo_p - hi_p, lo_m - hi_m), {"t": t, "x": x}, tol)
    return HypothesisReport(checks, sample_count, seed)


def field_lipschitz_in_time(nl: Nonlinearity, u: Field, t: float, s: float) -> tuple[float, float]:
    """(|F(t,u) - F(s,u)|_L2, (1 + |u|_H1)|t-s|^theta), the two sides of the time bound."""
    d = eval_nemytskii(nl, t, u) - eval_nemytskii(nl, s, u)
    return norm_l2(d), (1.0 + norm_h1(u)) * abs(t - s) ** nl.holder_theta
