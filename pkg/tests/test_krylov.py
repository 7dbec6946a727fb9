"""Hand-written Krylov kernels against scipy's implementations as independent oracles."""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from periodic_resonance.krylov import KrylovError, arnoldi_eigenvalues, block_lanczos, gmres, lanczos_function


def laplacian(n, shift=1.0):
    h = 1.0 / (n + 1)
    main = 2.0 / h**2 + shift
    return sp.diags([np.full(n - 1, -1 / h**2), np.full(n, main), np.full(n - 1, -1 / h**2)], [-1, 0, 1], format="csr")


def test_block_lanczos_matches_eigh():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.standard_normal((200, 200)))
    vals = np.concatenate([[5.0, 5.0, 4.0], np.linspace(-1, 1, 197)])
    a = q @ np.diag(vals) @ q.T

    def ok(theta, vecs):
        return np.all(np.linalg.norm(a @ vecs - vecs * theta, axis=0) < 1e-10)

    theta, vecs, _ = block_lanczos(lambda b: a @ b, 200, 3, ok)
    assert np.allclose(theta, [5.0, 5.0, 4.0], atol=1e-10)
    assert np.allclose(vecs.T @ vecs, np.eye(3), atol=1e-10)


def test_block_lanczos_reports_failure():
    a = np.diag(np.linspace(0, 1, 100))
    with pytest.raises(KrylovError):
        block_lanczos(lambda b: a @ b, 100, 2, lambda t, v: False, max_dim=20)


@pytest.mark.parametrize("kind", ["exp", "phi1"])
@pytest.mark.parametrize("tau", [1e-4, 1e-3])
def test_lanczos_function_against_expm_multiply(kind, tau):
    n = 300
    a = laplacian(n)
    x = np.linspace(0, 1, n + 2)[1:-1]
    v = np.exp(-50 * (x - 0.4) ** 2)
    res = lanczos_function(a.dot, v, tau, kind, tol=1e-12, max_dim=120)
    if kind == "exp":
        ref = spla.expm_multiply(-tau * a.tocsc(), v)
    else:
        # phi1(-tau A) v = (tau A)^{-1} (I - e^{-tau A}) v
        ref = spla.spsolve((tau * a).tocsc(), v - spla.expm_multiply(-tau * a.tocsc(), v))
    assert res.converged
    assert np.linalg.norm(res.value - ref) <= 1e-9 * np.linalg.norm(ref)


def test_lanczos_function_flags_stiff_failure():
    # tau * lambda_max ~ 4e4 is out of reach of a 40-dimensional space; the caller halves
    a = laplacian(300)
    res = lanczos_function(a.dot, np.ones(300), 0.1, "exp", tol=1e-10, max_dim=40)
    assert not res.converged and res.dimension == 40


def test_lanczos_function_breakdown_is_exact():
    a = sp.diags(np.array([1.0, 2.0, 3.0]))
    v = np.array([1.0, 0.0, 0.0])
    res = lanczos_function(a.dot, v, 0.5, "exp")
    assert res.converged and res.dimension == 1
    assert np.allclose(res.value, [np.exp(-0.5), 0, 0], atol=1e-15)


def test_gmres_matches_scipy():
    rng = np.random.default_rng(3)
    n = 150
    a = np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n)
    x, info = gmres(lambda v: a @ v, b, tol=1e-12, restart=30, max_restarts=20)
    ref, code = spla.gmres(a, b, rtol=1e-12, restart=30, maxiter=50)
    assert info.converged and code == 0
    assert np.linalg.norm(x - np.linalg.solve(a, b)) < 1e-9
    assert np.linalg.norm(x - ref) < 1e-8


def test_gmres_zero_rhs():
    x, info = gmres(lambda v: 2 * v, np.zeros(5))
    assert info.converged and np.all(x == 0)


def test_arnoldi_dominant_eigenvalues():
    rng = np.random.default_rng(5)
    n = 120
    d = np.concatenate([[20.0, 1.004, -1.5], rng.uniform(-0.5, 0.5, n - 3)])
    s = rng.standard_normal((n, n)) * 0.1 + np.eye(n)
    a = s @ np.diag(d) @ np.linalg.inv(s)
    theta, res, ok = arnoldi_eigenvalues(lambda v: a @ v, rng.standard_normal(n), 80, select=lambda z: np.abs(z) > 0.999, tol=1e-9)
    assert ok
    big = np.sort(theta[np.abs(theta) > 0.999].real)
    assert np.allclose(big, [-1.5, 1.004, 20.0], atol=1e-7)
    ref = spla.eigs(a, k=3, which="LM", return_eigenvectors=False)
    assert np.allclose(np.sort(ref.real), big, atol=1e-7)
