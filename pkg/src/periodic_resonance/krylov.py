"""Krylov-subspace kernels shared by the spectral, time-stepping and Newton code.

All routines work on flat float arrays with the Euclidean inner product. The
rectangle-rule L2 product differs from it by the constant h^N, so orthogonality
and symmetry carry over unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

MatVec = Callable[[np.ndarray], np.ndarray]


class KrylovError(RuntimeError):
    pass


def _orthonormal_block(w: np.ndarray, basis: np.ndarray | None, rng: np.random.Generator) -> np.ndarray:
    """QR of ``w`` after projecting out ``basis``; dependent columns get fresh random directions."""
    q, r = np.linalg.qr(w)
    scale = max(1.0, float(np.abs(r).max()) if r.size else 1.0)
    bad = np.abs(np.diag(r)) < 1e-12 * scale
    if np.any(bad):
        for k in np.flatnonzero(bad):
            z = rng.standard_normal(w.shape[0])
            for _ in range(2):
                if basis is not None and basis.shape[1]:
                    z -= basis @ (basis.T @ z)
                z -= q @ (q.T @ z)
            q[:, k] = z / np.linalg.norm(z)
    return q


def block_lanczos(
    apply: Callable[[np.ndarray], np.ndarray],
    n: int,
    nev: int,
    converged: Callable[[np.ndarray, np.ndarray], bool],
    block_size: int = 4,
    max_dim: int = 600,
    check_every: int = 5,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Largest ``nev`` eigenpairs of a symmetric operator by block Lanczos.

    Every new block is reorthogonalized twice against the whole basis, so
    multiplicities up to ``block_size`` are captured. ``apply`` maps an
    (n, b) block to an (n, b) block. ``converged(values, vectors)`` is polled
    every ``check_every`` blocks with the current Ritz pairs, largest first.
    Returns (values, vectors, basis dimension).
    """
    rng = np.random.default_rng(seed)
    b = min(block_size, n)
    max_dim = min(max_dim, n)
    basis = np.empty((n, max_dim + b))
    proj = np.zeros((max_dim + b, max_dim + b))
    basis[:, :b] = _orthonormal_block(rng.standard_normal((n, b)), None, rng)
    m = 0
    steps = 0
    values = vectors = None
    while m + b <= max_dim:
        block = basis[:, m : m + b]
        w = apply(block)
        v = basis[:, : m + b]
        coeff = v.T @ w
        w = w - v @ coeff
        corr = v.T @ w
        w -= v @ corr
        coeff += corr
        proj[: m + b, m : m + b] = coeff
        new = _orthonormal_block(w, v, rng)
        proj[m + b : m + 2 * b, m : m + b] = new.T @ w
        m += b
        steps += 1
        if m + b <= max_dim + b:
            basis[:, m : m + b] = new
        if steps % check_every == 0 or m + b > max_dim:
            t = proj[:m, :m]
            t = 0.5 * (t + t.T)
            theta, s = np.linalg.eigh(t)
            order = np.argsort(theta)[::-1][:nev]
            values = theta[order]
            vectors = basis[:, :m] @ s[:, order]
            if m >= nev and converged(values, vectors):
                return values, vectors, m
    raise KrylovError(f"block Lanczos did not converge within dimension {max_dim}")


# -- matrix functions --------------------------------------------------------


def _phi1(z: np.ndarray) -> np.ndarray:
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-12
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


@dataclass
class KrylovResult:
    value: np.ndarray
    converged: bool
    error_estimate: float
    dimension: int


def lanczos_function(
    matvec: MatVec,
    v: np.ndarray,
    tau: float,
    kind: str = "exp",
    tol: float = 1e-10,
    max_dim: int = 64,
) -> KrylovResult:
    """exp(-tau*A) v (kind='exp') or phi1(-tau*A) v (kind='phi1') for symmetric A.

    phi1(z) = (e^z - 1)/z. The error estimate is the usual
    beta_m * |[f(T_m) e_1]_m| * |v| and is compared against ``tol`` times the
    norm of the result. A Lanczos breakdown means the Krylov space is
    invariant and the result is exact.
    """
    if kind not in ("exp", "phi1"):
        raise ValueError(f"unknown function kind {kind!r}")
    fn = np.exp if kind == "exp" else _phi1
    beta0 = float(np.linalg.norm(v))
    if beta0 == 0.0:
        return KrylovResult(np.zeros_like(v), True, 0.0, 0)
    n = v.size
    max_dim = min(max_dim, n)
    q = np.empty((n, max_dim + 1))
    alpha = np.zeros(max_dim)
    beta = np.zeros(max_dim)
    q[:, 0] = v / beta0
    est = np.inf
    y = None
    for j in range(max_dim):
        w = matvec(q[:, j])
        alpha[j] = q[:, j] @ w
        w -= q[:, : j + 1] @ (q[:, : j + 1].T @ w)
        w -= q[:, : j + 1] @ (q[:, : j + 1].T @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        breakdown = beta[j] <= 1e-13 * max(1.0, abs(alpha[j]))
        if breakdown or m % 4 == 0 or m == max_dim:
            if m == 1:
                theta, s = alpha[:1], np.ones((1, 1))
            else:
                theta, s = sla.eigh_tridiagonal(alpha[:m], beta[: m - 1])
            y = s @ (fn(-tau * theta) * s[0, :])
            if breakdown:
                return KrylovResult(beta0 * (q[:, :m] @ y), True, 0.0, m)
            est = beta0 * beta[j] * abs(y[-1])
            ynorm = beta0 * np.linalg.norm(y)
            if est <= tol * max(ynorm, 1e-300):
                return KrylovResult(beta0 * (q[:, :m] @ y), True, est, m)
        q[:, j + 1] = w / beta[j]
    return KrylovResult(beta0 * (q[:, :max_dim] @ y), False, est, max_dim)


# -- linear solves -------------------------------------------------------------


@dataclass
class GMRESInfo:
    converged: bool
    residual: float
    iterations: int
    restarts: int


def gmres(
    matvec: MatVec,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-10,
    atol: float = 0.0,
    restart: int = 40,
    max_restarts: int = 10,
    stagnation: float = 1e-3,
) -> tuple[np.ndarray, GMRESInfo]:
    """Restarted GMRES(m) with modified Gram-Schmidt and Givens rotations.

    Stops when |b - A x| <= max(tol*|b|, atol). A restart cycle that reduces
    the residual by less than the relative factor ``stagnation`` ends the
    solve with ``converged=False``.
    """
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    target = max(tol * bnorm, atol)
    r = b - matvec(x) if x0 is not None else b.copy()
    rnorm = float(np.linalg.norm(r))
    iters = 0
    if rnorm <= target:
        return x, GMRESInfo(True, rnorm, 0, 0)
    m = min(restart, n)
    for cycle in range(max_restarts):
        start_norm = rnorm
        v = np.zeros((n, m + 1))
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm
        v[:, 0] = r / rnorm
        k_used = 0
        for k in range(m):
            w = matvec(v[:, k])
            iters += 1
            for i in range(k + 1):
                h[i, k] = w @ v[:, i]
                w -= h[i, k] * v[:, i]
            h[k + 1, k] = np.linalg.norm(w)
            for i in range(k):
                tmp = cs[i] * h[i, k] + sn[i] * h[i + 1, k]
                h[i + 1, k] = -sn[i] * h[i, k] + cs[i] * h[i + 1, k]
                h[i, k] = tmp
            denom = np.hypot(h[k, k], h[k + 1, k])
            if denom == 0.0:
                k_used = k
                break
            cs[k], sn[k] = h[k, k] / denom, h[k + 1, k] / denom
            h[k, k] = denom
            h[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            lucky = denom > 0 and np.linalg.norm(w) <= 1e-14 * denom
            if abs(g[k + 1]) <= target or lucky:
                break
            v[:, k + 1] = w / np.linalg.norm(w)
        if k_used:
            y = sla.solve_triangular(h[:k_used, :k_used], g[:k_used])
            x = x + v[:, :k_used] @ y
        r = b - matvec(x)
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            return x, GMRESInfo(True, rnorm, iters, cycle)
        if rnorm > (1.0 - stagnation) * start_norm:
            log.debug("GMRES stagnated at residual %.3e", rnorm)
            return x, GMRESInfo(False, rnorm, iters, cycle)
    return x, GMRESInfo(False, rnorm, iters, max_restarts)


def arnoldi_eigenvalues(
    matvec: MatVec,
    v0: np.ndarray,
    max_dim: int = 40,
    select: Callable[[np.ndarray], np.ndarray] | None = None,
    tol: float = 1e-9,
    check_every: int = 2,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Ritz values of a general operator by plain Arnoldi (no restarts).

    ``select`` marks the Ritz values whose convergence matters (default: all).
    Convergence means residual estimate h_{m+1,m}|e_m^T y| <= tol*max(1, |theta|)
    for every selected value in two consecutive checks with an unchanged
    selection count. Returns (ritz values, residual estimates, converged).
    """
    n = v0.size
    max_dim = min(max_dim, n)
    v = np.zeros((n, max_dim + 1))
    h = np.zeros((max_dim + 1, max_dim))
    v[:, 0] = v0 / np.linalg.norm(v0)
    prev_count = -1
    theta = res = np.array([])
    for k in range(max_dim):
        w = matvec(v[:, k])
        for _ in range(2):
            c = v[:, : k + 1].T @ w
            w -= v[:, : k + 1] @ c
            h[: k + 1, k] += c
        h[k + 1, k] = np.linalg.norm(w)
        m = k + 1
        breakdown = h[k + 1, k] <= 1e-14 * max(1.0, np.abs(h[: m, :m]).max())
        if breakdown or m % check_every == 0 or m == max_dim:
            theta, y = np.linalg.eig(h[:m, :m])
            y = y / np.linalg.norm(y, axis=0)
            res = np.abs(h[m, m - 1] * y[-1, :])
            mask = select(theta) if select is not None else np.ones(theta.size, bool)
            ok = np.all(res[mask] <= tol * np.maximum(1.0, np.abs(theta[mask])))
            if breakdown or (ok and mask.sum() == prev_count):
                return theta, res, True
            prev_count = int(mask.sum()) if ok else -1
        if breakdown:
            break
        v[:, k + 1] = w / h[k + 1, k]
    return theta, res, False
