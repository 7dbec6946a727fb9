"""Low-lying spectrum of A: isolated eigenvalues, kernel basis and projections."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .krylov import KrylovError, block_lanczos
from .spatial import DiscreteOperator, Field, inner_l2

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-9


class SpectrumError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigen-data of A below the essential-spectrum threshold v_bar.

    ``eigenvalues``/``eigenvectors`` hold the isolated part (below
    ``v_bar - zero_tol``); ``computed_eigenvalues`` holds everything the
    solver returned. Eigenvectors are L2-orthonormal Fields.
    """

    eigenvalues: np.ndarray
    eigenvectors: tuple[Field, ...]
    kernel_basis: tuple[Field, ...]
    negative_basis: tuple[Field, ...]
    m_minus: int
    kernel_dim: int
    zero_tol: float
    v_bar: float
    computed_eigenvalues: np.ndarray
    residuals: np.ndarray
    recentering_shift: float = 0.0
    warnings: tuple[str, ...] = field(default=())

    @property
    def kernel_matrix(self) -> np.ndarray:
        """Kernel basis values as columns, shape (n_nodes, kernel_dim)."""
        if not self.kernel_basis:
            return np.zeros((0, 0))
        return np.column_stack([phi.values for phi in self.kernel_basis])

    @property
    def grid(self):
        return self.eigenvectors[0].grid if self.eigenvectors else None

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "m_minus": self.m_minus,
            "kernel_dim": self.kernel_dim,
            "zero_tol": self.zero_tol,
            "recentering_shift": self.recentering_shift,
        }


def _mgs(vectors: list[np.ndarray], weight: float) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for v in vectors:
        w = v.copy()
        for q in out:
            w -= weight * np.dot(q, w) * q
        out.append(w / np.sqrt(weight * np.dot(w, w)))
    return out


def compute_low_spectrum(
    op: DiscreteOperator,
    count: int = 16,
    zero_tol: float | None = None,
    *,
    residual_tol: float = 1e-9,
    block_size: int = 4,
    max_dim: int = 800,
    seed: int = 0,
) -> SpectralData:
    """The ``count`` algebraically smallest eigenpairs of A, classified.

    Shift-invert block Lanczos on (A - sigma)^{-1} with sigma one unit below
    the Gershgorin lower bound, so the shifted matrix is positive definite.
    An eigenpair counts as converged once its true residual satisfies
    |A psi - lam psi| <= residual_tol * (|lam| + 1) * |psi|.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if zero_tol is None:
        zero_tol = 1e-6 * op.v_bar_infinity
    if not zero_tol > 0:
        raise ValueError("zero_tol must be positive")
    grid = op.grid
    n = grid.size
    count = min(count, n)
    sigma = op.gershgorin_lower_bound() - 1.0
    shifted = (op.matrix - sigma * sp.identity(n, format="csc")).tocsc()
    solve = spla.factorized(shifted)
    mat = op.matrix

    def apply(block):
        return np.column_stack([solve(block[:, k]) for k in range(block.shape[1])])

    def converged(theta, vecs):
        lam = sigma + 1.0 / theta
        res = np.linalg.norm(mat @ vecs - vecs * lam, axis=0)
        return bool(np.all(res <= residual_tol * (np.abs(lam) + 1.0)))

    try:
        theta, vecs, dim = block_lanczos(
            apply, n, count, converged, block_size=block_size, max_dim=max_dim, seed=seed
        )
    except KrylovError as exc:
        raise SpectrumError(f"eigensolver did not converge: {exc}") from exc
    lam = sigma + 1.0 / theta
    order = np.argsort(lam)
    lam = lam[order]
    vecs = vecs[:, order]
    residual_raw = np.linalg.norm(mat @ vecs - vecs * lam, axis=0)
    log.debug("low spectrum converged with basis dimension %d", dim)

    weight = grid.cell_volume
    vecs = vecs / np.sqrt(weight * np.sum(vecs**2, axis=0))
    # clustered eigenvalues: re-orthonormalize each degenerate group
    cols = [vecs[:, k] for k in range(vecs.shape[1])]
    k = 0
    while k < len(cols):
        j = k + 1
        while j < len(cols) and lam[j] - lam[j - 1] <= DEGENERACY_TOL * max(1.0, abs(lam[j])):
            j += 1
        if j - k > 1:
            cols[k:j] = _mgs(cols[k:j], weight)
        k = j
    fields = [Field(grid, c) for c in cols]

    notes = []
    isolated = lam < op.v_bar_infinity - zero_tol
    if isolated.all():
        notes.append(
            f"all {count} computed eigenvalues lie below v_bar={op.v_bar_infinity}; "
            "increase count to reach the essential spectrum"
        )
    for v in lam[isolated]:
        if zero_tol < abs(v) < 10.0 * zero_tol:
            notes.append(f"eigenvalue {v:.3e} is ill-separated from the kernel threshold {zero_tol:.1e}")
    for msg in notes:
        log.warning(msg)

    iso_lam = lam[isolated]
    iso_vec = [f for f, keep in zip(fields, isolated) if keep]
    kernel = [f for f, v in zip(iso_vec, iso_lam) if abs(v) <= zero_tol]
    negative = [f for f, v in zip(iso_vec, iso_lam) if v < -zero_tol]
    return SpectralData(
        eigenvalues=iso_lam,
        eigenvectors=tuple(iso_vec),
        kernel_basis=tuple(kernel),
        negative_basis=tuple(negative),
        m_minus=len(negative),
        kernel_dim=len(kernel),
        zero_tol=float(zero_tol),
        v_bar=op.v_bar_infinity,
        computed_eigenvalues=lam,
        residuals=residual_raw,
        warnings=tuple(notes),
    )


def recenter_resonance(
    op: DiscreteOperator, sd: SpectralData, window: float | None = None
) -> tuple[DiscreteOperator, SpectralData]:
    """Shift Vinf so the eigenvalue closest to zero becomes exactly the kernel.

    Discretization moves a zero eigenvalue of the continuum operator by
    O(h^2). Only eigenvalues with |lam| <= window (default 5% of v_bar) are
    re-centred; otherwise the inputs come back unchanged.
    """
    if window is None:
        window = 0.05 * op.v_bar_infinity
    if sd.computed_eigenvalues.size == 0:
        return op, sd
    k = int(np.argmin(np.abs(sd.computed_eigenvalues)))
    shift = float(sd.computed_eigenvalues[k])
    if abs(shift) > window:
        return op, sd
    # a degenerate group is moved together: shift by the group mean
    group = np.abs(sd.computed_eigenvalues - shift) <= sd.zero_tol
    shift = float(np.mean(sd.computed_eigenvalues[group]))
    new_op = op.shifted(shift)
    # isolation is shift invariant: both lam and v_bar move by the same amount
    iso_lam = sd.eigenvalues - shift
    iso_vec = list(sd.eigenvectors)
    kernel = [f for f, v in zip(iso_vec, iso_lam) if abs(v) <= sd.zero_tol]
    negative = [f for f, v in zip(iso_vec, iso_lam) if v < -sd.zero_tol]
    new_sd = SpectralData(
        eigenvalues=iso_lam,
        eigenvectors=tuple(iso_vec),
        kernel_basis=tuple(kernel),
        negative_basis=tuple(negative),
        m_minus=len(negative),
        kernel_dim=len(kernel),
        zero_tol=sd.zero_tol,
        v_bar=new_op.v_bar_infinity,
        computed_eigenvalues=sd.computed_eigenvalues - shift,
        residuals=sd.residuals,
        recentering_shift=sd.recentering_shift + shift,
        warnings=sd.warnings,
    )
    return new_op, new_sd


def project_kernel(sd: SpectralData, u: Field) -> np.ndarray:
    """Coordinates c_k = (u, phi_k)_{L2} of the orthogonal projection onto the kernel."""
    if sd.kernel_dim == 0:
        raise SpectrumError("the kernel is trivial: nothing to project onto")
    return np.array([inner_l2(u, phi) for phi in sd.kernel_basis])


def reconstruct(sd: SpectralData, coords) -> Field:
    """sum_k c_k phi_k."""
    coords = np.atleast_1d(np.asarray(coords, dtype=float))
    if coords.size != sd.kernel_dim:
        raise ValueError(f"expected {sd.kernel_dim} kernel coordinates, got {coords.size}")
    if sd.kernel_dim == 0:
        raise SpectrumError("the kernel is trivial")
    return Field(sd.kernel_basis[0].grid, sd.kernel_matrix @ coords)


def project_negative(sd: SpectralData, u: Field) -> Field:
    """Orthogonal projection onto the span of the negative eigenvectors."""
    out = np.zeros(u.grid.size)
    for psi in sd.negative_basis:
        out += inner_l2(u, psi) * psi.values
    return Field(u.grid, out)
