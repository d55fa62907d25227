"""Source-measure fitting and sampling for training and generation.

Gaussian sources draw means from a moment-matched normal and
covariances from a Wishart whose scale is the Bures-Wasserstein
barycenter of the dataset covariances.  Point-cloud sources draw one
random Cholesky factor per cloud and then iid Gaussian points, which
keeps the source measure diverse instead of collapsing as the point
count grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .bw import Gaussian
from .entropic import PointCloud


@dataclass
class BwSourceSpec:
    mean_loc: np.ndarray
    mean_scale: np.ndarray  # per-coordinate std of dataset means
    wishart_scale: np.ndarray  # BW barycenter of dataset covariances
    dof: int

    def __post_init__(self):
        self.mean_loc = np.asarray(self.mean_loc, dtype=float)
        self.mean_scale = np.asarray(self.mean_scale, dtype=float)
        self.wishart_scale = linalg.validate_psd(self.wishart_scale)
        if self.dof < self.wishart_scale.shape[0]:
            raise ValueError("Wishart dof must be >= dimension")


@dataclass
class PcSourceSpec:
    factor_mean: np.ndarray  # mean lower-triangular factor
    factor_std: float
    dim: int
    sizes: list[int] = field(default_factory=list)  # empirical size pool

    def __post_init__(self):
        self.factor_mean = np.asarray(self.factor_mean, dtype=float)
        if self.factor_std < 0:
            raise ValueError("factor std must be nonnegative")


def bw_barycenter(covs, max_iters: int = 50, tol: float = 1e-6):
    """Bures-Wasserstein barycenter by fixed-point iteration.

    Sigma <- Sigma^-1/2 (mean_i (Sigma^1/2 Sigma_i Sigma^1/2)^1/2)^2 Sigma^-1/2,
    started from the Euclidean mean; stops when the Frobenius update
    drops below tol.
    """
    covs = [linalg.validate_psd(c) for c in covs]
    if not covs:
        raise ValueError("need at least one covariance")
    sigma = np.mean(covs, axis=0)
    for _ in range(max_iters):
        half = linalg.psd_sqrt(sigma)
        inv_half, _ = linalg.psd_inv_sqrt(sigma, rank_tol=1e-12)
        mean_root = np.mean([linalg.psd_sqrt(half @ c @ half) for c in covs], axis=0)
        nxt = linalg.symmetrize(inv_half @ mean_root @ mean_root @ inv_half)
        if np.linalg.norm(nxt - sigma) <= tol:
            sigma = nxt
            break
        sigma = nxt
    return sigma


def fit_source_bw(dataset, dof: int | None = None) -> BwSourceSpec:
    """Fit the Gaussian/Wishart source to a list of Gaussians."""
    if not dataset:
        raise ValueError("dataset must be nonempty")
    means = np.stack([g.mean for g in dataset])
    d = means.shape[1]
    scale = bw_barycenter([g.cov for g in dataset])
    return BwSourceSpec(
        mean_loc=means.mean(axis=0),
        mean_scale=means.std(axis=0),
        wishart_scale=scale,
        dof=dof if dof is not None else d + 2,
    )


def sample_source_bw(spec: BwSourceSpec, rng: np.random.Generator) -> Gaussian:
    """Draw mean ~ N(loc, diag(scale^2)), cov ~ Wishart(scale/dof, dof)."""
    d = spec.mean_loc.shape[0]
    mean = spec.mean_loc + spec.mean_scale * rng.standard_normal(d)
    # factor the normalized scale; fall back to an eigenvalue root when
    # the barycenter is only semidefinite
    base = spec.wishart_scale / spec.dof
    try:
        L = linalg.cholesky_factor(base + 1e-12 * np.trace(base) * np.eye(d))
    except linalg.CholeskyError:
        L = linalg.psd_sqrt(base)
    G = rng.standard_normal((d, spec.dof))
    A = L @ G
    cov = linalg.symmetrize(A @ A.T)
    return Gaussian(mean, cov)


def fit_source_pc(dataset) -> PcSourceSpec:
    """Fit the stochastic-factor source to a list of point clouds.

    The factor mean and (scalar) std are the elementwise statistics of
    the Cholesky factors of the per-cloud empirical covariances.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    d = dataset[0].dim
    factors = []
    for cloud in dataset:
        centered = cloud.points - cloud.points.mean(axis=0)
        cov = centered.T @ centered / max(cloud.n, 1)
        cov = linalg.symmetrize(cov) + 1e-9 * np.eye(d)
        factors.append(linalg.cholesky_factor(cov))
    factors = np.stack(factors)
    mean = factors.mean(axis=0)
    std = float(factors.std()) if len(dataset) > 1 else 0.0
    return PcSourceSpec(
        factor_mean=mean,
        factor_std=std,
        dim=d,
        sizes=[c.n for c in dataset],
    )


def sample_source_pc(spec: PcSourceSpec, n_points: int, rng: np.random.Generator) -> PointCloud:
    """One cloud: a single random factor L, then n iid N(0, L L^T) points."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    d = spec.dim
    noise = np.tril(rng.standard_normal((d, d)))
    L = spec.factor_mean + spec.factor_std * noise
    pts = rng.standard_normal((n_points, d)) @ L.T
    return PointCloud(pts)


def sample_source_size(spec: PcSourceSpec, rng: np.random.Generator,
                       policy: str = "match-target", fixed: int | None = None) -> int:
    """Pick a cloud size: fixed count or a draw from the empirical pool."""
    if policy == "fixed":
        if not fixed:
            raise ValueError("fixed size policy requires a count")
        return int(fixed)
    if policy == "match-target":
        if not spec.sizes:
            raise ValueError("no empirical sizes recorded in the source spec")
        return int(spec.sizes[int(rng.integers(len(spec.sizes)))])
    raise ValueError(f"unknown size policy {policy!r}")
