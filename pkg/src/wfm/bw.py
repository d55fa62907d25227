"""Closed-form Bures-Wasserstein geometry for Gaussian measures.

Gaussians are (mean, covariance) pairs.  All geodesic quantities (OT
matrix, exp/log maps, McCann interpolation, velocities, tangent norm)
have closed forms built on the PSD kernels in :mod:`wfm.linalg`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg


class DimensionMismatchError(ValueError):
    pass


class TangentBoundaryError(ValueError):
    """Tangent matrix S has an eigenvalue at or below -1."""


@dataclass
class Gaussian:
    """A Gaussian measure N(mean, cov) with a validated PSD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = linalg.validate_psd(self.cov)
        if self.cov.shape[0] != self.mean.shape[0]:
            raise DimensionMismatchError(
                f"mean has dim {self.mean.shape[0]}, cov is {self.cov.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class TangentBW:
    """Tangent vector at a Gaussian: translation a plus symmetric S."""

    a: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.S = linalg.symmetrize(self.S)
        if self.S.shape[0] != self.a.shape[0]:
            raise DimensionMismatchError(
                f"a has dim {self.a.shape[0]}, S is {self.S.shape}"
            )


@dataclass
class BwPath:
    """Source/target pair with the transport matrix cached."""

    source: Gaussian
    target: Gaussian
    ot_matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ot_matrix = bw_ot_matrix(self.source, self.target)


def _check_dims(mu: Gaussian, nu: Gaussian):
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"dims differ: {mu.dim} vs {nu.dim}")


def bw_ot_matrix(src: Gaussian, dst: Gaussian):
    """Linear OT matrix C with C @ cov_src @ C == cov_dst on PD inputs.

    Rank-deficient source covariances fall back to pseudo-inverse square
    roots (a warning is emitted; the pushforward identity may then only
    hold on the range of the source covariance).
    """
    _check_dims(src, dst)
    half = linalg.psd_sqrt(src.cov)
    inv_half, degenerate = linalg.psd_inv_sqrt(src.cov, rank_tol=1e-12)
    if degenerate or _is_rank_deficient(src.cov):
        warnings.warn(
            "source covariance is rank-deficient; using pseudo-inverse "
            "transport matrix",
            RuntimeWarning,
            stacklevel=2,
        )
    middle = linalg.psd_sqrt(half @ dst.cov @ half)
    return linalg.symmetrize(inv_half @ middle @ inv_half)


def _is_rank_deficient(cov) -> bool:
    vals = np.linalg.eigvalsh(cov)
    return bool(vals.min() <= 1e-12 * max(vals.max(), 1e-300))


def bw_distance_sq(mu: Gaussian, nu: Gaussian) -> float:
    """Squared W2 distance between two Gaussians (Frechet form).

    ||a-b||^2 + Tr(A + B - 2 (A^1/2 B A^1/2)^1/2), with the trace term
    clamped at zero to absorb round-off.
    """
    _check_dims(mu, nu)
    gap = mu.mean - nu.mean
    half = linalg.psd_sqrt(mu.cov)
    cross = linalg.psd_sqrt(half @ nu.cov @ half)
    trace_term = float(np.trace(mu.cov) + np.trace(nu.cov) - 2.0 * np.trace(cross))
    return float(gap @ gap) + max(trace_term, 0.0)


def bw_log(base: Gaussian, other: Gaussian) -> TangentBW:
    """Logarithmic map: tangent vector at base pointing to other."""
    C = bw_ot_matrix(base, other)
    return TangentBW(other.mean - base.mean, C - np.eye(base.dim))


def bw_exp(base: Gaussian, v: TangentBW) -> Gaussian:
    """Exponential map: N(m + a, (S+I) Sigma (S+I)).

    Requires S + I to be PSD (within tolerance); the result is PSD by
    construction, never needing projection.
    """
    if v.a.shape[0] != base.dim:
        raise DimensionMismatchError("tangent dim does not match base")
    shift = v.S + np.eye(base.dim)
    vals = np.linalg.eigvalsh(shift)
    tol = linalg.PSD_TOL * max(linalg.spectral_radius_bound(shift), 1.0)
    if vals.min() < -tol:
        raise TangentBoundaryError(
            f"S + I has eigenvalue {vals.min():.3e}; exponential map "
            "requires S > -I"
        )
    cov = linalg.symmetrize(shift @ base.cov @ shift)
    # clamp tiny negatives produced by the boundary tolerance
    cov = linalg.psd_project(cov) if vals.min() < 0 else cov
    return Gaussian(base.mean + v.a, cov)


def bw_mccann(src: Gaussian, dst: Gaussian, t: float, ot_matrix=None) -> Gaussian:
    """McCann interpolation at time t (t=0 -> src, t=1 -> dst)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    C = bw_ot_matrix(src, dst) if ot_matrix is None else ot_matrix
    T_t = (1.0 - t) * np.eye(src.dim) + t * C
    mean = (1.0 - t) * src.mean + t * dst.mean
    # T_t and src.cov are both PSD, so T_t @ cov @ T_t is PSD up to round-off
    cov = linalg.symmetrize(T_t @ src.cov @ T_t)
    return Gaussian(mean, cov)


def bw_velocity(src: Gaussian, dst: Gaussian, t: float, ot_matrix=None) -> TangentBW:
    """Riemannian velocity of the McCann path at time t.

    mean part: dst.mean - src.mean; covariance part:
    (C - I) ((1-t) I + t C)^{-1}, symmetrized.
    """
    C = bw_ot_matrix(src, dst) if ot_matrix is None else ot_matrix
    eye = np.eye(src.dim)
    T_t = (1.0 - t) * eye + t * C
    try:
        S = (C - eye) @ np.linalg.inv(T_t)
    except np.linalg.LinAlgError as exc:
        raise TangentBoundaryError(f"interpolation matrix singular at t={t}") from exc
    return TangentBW(dst.mean - src.mean, linalg.symmetrize(S))


def bw_tangent_norm_sq(base: Gaussian, v: TangentBW) -> float:
    """Squared tangent norm at base: ||a||^2 + Tr(S Sigma S)."""
    if v.a.shape[0] != base.dim:
        raise DimensionMismatchError("tangent dim does not match base")
    quad = float(np.trace(v.S @ base.cov @ v.S))
    return float(v.a @ v.a) + max(quad, 0.0)


def frechet_cost_matrix(batch_a, batch_b):
    """Pairwise squared-W2 matrix between two lists of Gaussians.

    Vectorized over pairs: eigendecompositions are stacked so the cost
    of a BxB matrix stays far below B^2 scalar calls.
    """
    if not batch_a or not batch_b:
        raise ValueError("batches must be nonempty")
    dim = batch_a[0].dim
    for g in list(batch_a) + list(batch_b):
        if g.dim != dim:
            raise DimensionMismatchError("batch dims are not uniform")
    means_a = np.stack([g.mean for g in batch_a])
    means_b = np.stack([g.mean for g in batch_b])
    covs_a = np.stack([g.cov for g in batch_a])
    covs_b = np.stack([g.cov for g in batch_b])

    gaps = means_a[:, None, :] - means_b[None, :, :]
    mean_term = np.einsum("ijk,ijk->ij", gaps, gaps)

    halves_a = np.stack([linalg.psd_sqrt(c) for c in covs_a])
    inner = np.einsum("aij,bjk,akl->abil", halves_a, covs_b, halves_a)
    inner = 0.5 * (inner + np.swapaxes(inner, -1, -2))
    cross_vals = np.linalg.eigvalsh(inner)
    cross_trace = np.sqrt(np.clip(cross_vals, 0.0, None)).sum(axis=-1)

    tr_a = np.trace(covs_a, axis1=-2, axis2=-1)
    tr_b = np.trace(covs_b, axis1=-2, axis2=-1)
    trace_term = tr_a[:, None] + tr_b[None, :] - 2.0 * cross_trace
    return mean_term + np.clip(trace_term, 0.0, None)
