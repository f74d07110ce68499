"""Rank-revealing decompositions and the projections built on them.

Every function accepts either a single matrix of shape ``(r, c)`` or a stack
of shape ``(..., r, c)``; vectors follow the same leading-axis convention.
Numerical rank is always relative: a singular value (or pivot) counts when it
exceeds ``tol`` times the largest one, and an all-zero matrix has rank 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NoSolutionError

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class ProjectionReport:
    """Rank and orthonormal bases of ``ker(A)`` and ``row(A)``.

    Both bases live in the domain of ``A`` (dimension ``cols``); each row of
    ``kernel_basis`` / ``rowspace_basis`` is one basis vector.
    """

    rank: int
    tolerance: float
    kernel_basis: np.ndarray
    rowspace_basis: np.ndarray


def _as_matrix(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2:
        raise InvalidInputError(f"{name} must be at least 2-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def _check_tol(tol):
    if not tol > 0:
        raise InvalidInputError(f"tolerance must be positive, got {tol}")


def _svd(A, tol):
    """Reduced SVD plus the boolean mask of numerically nonzero singular values."""
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    smax = s[..., :1] if s.shape[-1] else np.zeros(s.shape[:-1] + (1,))
    mask = (s > tol * smax) & (smax > 0)
    return U, s, Vh, mask


def rank_with_tolerance(A, tol: float = DEFAULT_TOL) -> ProjectionReport:
    """Numerical rank of a single matrix with orthonormal kernel/row-space bases."""
    A = _as_matrix(A)
    if A.ndim != 2:
        raise InvalidInputError("rank_with_tolerance expects a single matrix")
    _check_tol(tol)
    cols = A.shape[1]
    _, s, Vh_full = np.linalg.svd(A, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.count_nonzero(s > tol * smax)) if smax > 0 else 0
    return ProjectionReport(
        rank=rank,
        tolerance=tol,
        kernel_basis=Vh_full[rank:cols].copy(),
        rowspace_basis=Vh_full[:rank].copy(),
    )


def _split(A, v, tol):
    """Return (theta, v_row) for the min-norm solve of A theta = v_row."""
    U, s, Vh, mask = _svd(A, tol)
    coeff = np.einsum("...ji,...j->...i", U, v)
    coeff = np.where(mask, coeff, 0.0)
    v_row = np.einsum("...ij,...j->...i", U, coeff)
    inv_s = np.where(mask, 1.0 / np.where(mask, s, 1.0), 0.0)
    theta = np.einsum("...ji,...j->...i", Vh, coeff * inv_s)
    return theta, v_row


def _check_vector(A, v, axis_len, name="v"):
    v = np.asarray(v, dtype=float)
    if v.ndim < 1 or v.shape[-1] != axis_len:
        raise InvalidInputError(
            f"{name} has trailing dimension {v.shape[-1] if v.ndim else 0}, expected {axis_len}"
        )
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return v


def project_kernel(A, v, tol: float = DEFAULT_TOL):
    """Split ``v`` into its ``ker(A')`` and ``range(A)`` components.

    ``A`` has shape ``(..., n, d)`` and ``v`` shape ``(..., n)``.  The kernel
    part is computed as the remainder so ``v_ker + v_row`` reproduces ``v`` up
    to one rounding per entry.
    """
    A = _as_matrix(A)
    _check_tol(tol)
    v = _check_vector(A, v, A.shape[-2])
    _, v_row = _split(A, v, tol)
    v_ker = v - v_row
    return v_ker, v_row


def min_norm_split(sigma, rhs, tol: float = DEFAULT_TOL):
    """Min-norm solution of ``sigma theta = proj_range(rhs)`` and the residual part.

    Returns ``(theta, residual)`` with ``residual = rhs - sigma theta`` lying in
    ``ker(sigma')``.  This is the single SVD behind both the market price of
    risk and hedge synthesis.
    """
    sigma = _as_matrix(sigma, "sigma")
    _check_tol(tol)
    rhs = _check_vector(sigma, rhs, sigma.shape[-2], "rhs")
    theta, v_row = _split(sigma, rhs, tol)
    return theta, rhs - v_row


def solve_min_norm_rowspace(sigma, rhs, tol: float = DEFAULT_TOL):
    """Minimal-norm ``theta`` in ``row(sigma)`` with ``sigma theta = rhs``.

    Raises :class:`NoSolutionError` when ``rhs`` leaves the range of ``sigma``
    by more than ``tol * max(1, |rhs|)``; for stacked input the largest
    residual is reported.
    """
    theta, residual = min_norm_split(sigma, rhs, tol)
    res_norm = np.linalg.norm(residual, axis=-1)
    scale = np.maximum(1.0, np.linalg.norm(np.asarray(rhs, dtype=float), axis=-1))
    bad = res_norm > tol * scale
    if np.any(bad):
        raise NoSolutionError("right-hand side is not in the range of sigma", np.max(res_norm))
    return theta


def independent_columns(X, tol: float = 1e-9):
    """Indices of a maximal well-conditioned column subset (pivoted QR)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] == 0:
        return np.arange(0)
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.arange(0)
    keep = diag > tol * diag[0]
    return np.sort(piv[: diag.size][keep])


def _selector_single(sigma, tol):
    # Pivoted Gram-Schmidt on the rows of sigma: v = sum of the orthogonalised
    # pivot rows, which is nonzero exactly when some row survives the pivot test.
    rows = sigma.T
    if not np.any(rows):
        return np.zeros(sigma.shape[1])
    Q, R, _ = scipy.linalg.qr(rows, mode="economic", pivoting=True)
    diag = np.diag(R)
    keep = np.abs(diag) > tol * np.abs(diag[0])
    # R_ii q_i is the residual of the i-th pivot row, independent of LAPACK's sign choice.
    return (Q[:, keep] * diag[keep]).sum(axis=1)


def rowspace_selector(sigma, tol: float = DEFAULT_TOL):
    """Deterministic nonzero vector in ``row(sigma) = Im(sigma')``.

    Returns the sum of the pivoted Gram-Schmidt residuals of the rows of
    ``sigma``; it is zero iff ``sigma`` is (numerically) zero and varies
    smoothly with ``sigma`` as long as the pivot order is unchanged.
    Stacked input is evaluated once per distinct matrix.
    """
    sigma = _as_matrix(sigma, "sigma")
    _check_tol(tol)
    if sigma.ndim == 2:
        return _selector_single(sigma, tol)
    lead = sigma.shape[:-2]
    flat = sigma.reshape((-1,) + sigma.shape[-2:])
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    out = np.stack([_selector_single(m, tol) for m in uniq])
    return out[inverse.reshape(-1)].reshape(lead + (sigma.shape[-1],))


def kernel_projector(sigma, tol: float = DEFAULT_TOL):
    """Orthogonal projector onto ``ker(sigma)`` (shape ``(..., d, d)``)."""
    sigma = _as_matrix(sigma, "sigma")
    _check_tol(tol)
    _, _, Vh, mask = _svd(sigma, tol)
    Vr = np.where(mask[..., :, None], Vh, 0.0)
    d = sigma.shape[-1]
    return np.eye(d) - np.einsum("...ki,...kj->...ij", Vr, Vr)
