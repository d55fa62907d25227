"""Dense symmetric / PSD matrix kernels.

All functions take and return plain ``numpy`` arrays.  Matrices are
symmetrized on entry so downstream formulas never see asymmetry drift,
and every eigendecomposition uses a deterministic sign convention so
serialized results are stable across runs.
"""

from __future__ import annotations

import numpy as np

# Relative tolerance (times spectral radius) below which a negative
# eigenvalue is treated as round-off rather than a PSD violation.
PSD_TOL = 1e-9


class LinalgError(Exception):
    """Base class for matrix-kernel failures."""


class PsdViolationError(LinalgError):
    """Input has an eigenvalue below the admissible negative tolerance."""


class CholeskyError(LinalgError):
    """Non-positive pivot encountered while factoring."""


def symmetrize(mat):
    """Return (M + M^T) / 2 as a float array."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[-1] != mat.shape[-2]:
        raise LinalgError(f"expected a square matrix, got shape {mat.shape}")
    return 0.5 * (mat + mat.T)


def spectral_radius_bound(mat) -> float:
    """Cheap upper bound used to scale tolerances (max abs row sum)."""
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return 0.0
    return float(np.abs(mat).sum(axis=-1).max())


def sym_eig(mat):
    """Eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and each eigenvector's first nonzero component
    made positive (deterministic sign convention).
    """
    mat = symmetrize(mat)
    try:
        vals, vecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh rarely fails
        raise LinalgError(f"eigendecomposition did not converge: {exc}") from exc
    # stable sort so repeated eigenvalues keep a deterministic column order
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nonzero = np.nonzero(np.abs(col) > 1e-12)[0]
        pivot = nonzero[0] if nonzero.size else 0
        if col[pivot] < 0:
            vecs[:, k] = -col
    return vals, vecs


def validate_psd(mat, tol_scale: float = PSD_TOL):
    """Symmetrize and check PSD-ness; raises PsdViolationError otherwise."""
    mat = symmetrize(mat)
    vals = np.linalg.eigvalsh(mat)
    tol = tol_scale * max(spectral_radius_bound(mat), 1.0e-300)
    if vals.min(initial=0.0) < -tol:
        raise PsdViolationError(
            f"matrix has eigenvalue {vals.min():.3e} below -{tol:.3e}"
        )
    return mat


def psd_sqrt(mat):
    """Symmetric PSD square root.

    Eigenvalues within the PSD tolerance of zero are clamped to 0; an
    eigenvalue below the tolerance raises :class:`PsdViolationError`.
    """
    mat = symmetrize(mat)
    vals, vecs = sym_eig(mat)
    tol = PSD_TOL * max(spectral_radius_bound(mat), 1e-300)
    if vals.min(initial=0.0) < -tol:
        raise PsdViolationError(
            f"cannot take PSD sqrt: eigenvalue {vals.min():.3e} < -{tol:.3e}"
        )
    vals = np.clip(vals, 0.0, None)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return symmetrize(root)


def psd_inv_sqrt(mat, rank_tol: float = 1e-12):
    """Pseudo-inverse square root of a PSD matrix.

    Eigenvalues at or below ``rank_tol * lambda_max`` map to 0, the rest
    to ``lambda**-0.5``.  Returns ``(matrix, degenerate)`` where the flag
    marks a fully degenerate (all-zero) result.
    """
    mat = symmetrize(mat)
    vals, vecs = sym_eig(mat)
    lam_max = max(vals.max(initial=0.0), 0.0)
    cut = rank_tol * lam_max
    inv = np.where(vals > cut, 1.0 / np.sqrt(np.where(vals > cut, vals, 1.0)), 0.0)
    degenerate = not np.any(vals > cut)
    out = symmetrize((vecs * inv) @ vecs.T)
    return out, degenerate


def psd_project(mat):
    """Nearest PSD matrix in Frobenius norm (eigenvalue truncation)."""
    mat = symmetrize(mat)
    vals, vecs = sym_eig(mat)
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * vals) @ vecs.T)


def cholesky_factor(mat):
    """Lower-triangular L with L L^T == M; requires strictly PD input."""
    mat = symmetrize(mat)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        # locate the offending pivot for the error message
        d = mat.shape[0]
        for k in range(1, d + 1):
            try:
                np.linalg.cholesky(mat[:k, :k])
            except np.linalg.LinAlgError:
                raise CholeskyError(f"non-positive pivot at index {k - 1}") from exc
        raise CholeskyError("factorization failed") from exc
