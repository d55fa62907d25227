"""Sample generation by integrating velocity fields.

The integrators take a field callable rather than raw parameters, so
exact reference fields (e.g. the true geodesic velocity) integrate
through the same code path as trained models; ``model_bw_field`` /
``model_pc_field`` adapt trained parameters to that interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bw, linalg
from .entropic import PointCloud
from .nn import models

DEFAULT_BW_STEPS = 64
DEFAULT_PC_STEPS = 100
MAX_HALVINGS = 10


class GenerationAbort(RuntimeError):
    pass


@dataclass
class BwGenDiagnostics:
    boundary_halvings: int = 0
    projections: int = 0


def model_bw_field(params_mean, params_cov, label=None):
    """Adapt trained BW networks to a field(g, t) -> TangentBW callable."""

    def field(g: bw.Gaussian, t: float) -> bw.TangentBW:
        return models.bw_field_forward(params_mean, params_cov, g, t, label=label)

    return field


def model_pc_field(params, label=None):
    """Adapt a trained point-cloud network to field(points, t) -> n x d."""

    def field(points: np.ndarray, t: float) -> np.ndarray:
        return models.pc_field_forward(params, points, t, label=label).value

    return field


def generate_bw(field, init: bw.Gaussian, n_steps: int = DEFAULT_BW_STEPS,
                keep_trajectory: bool = False,
                diagnostics: BwGenDiagnostics | None = None):
    """Riemannian Euler integration over Gaussians.

    Per step: (s, S) from the field; m += h s and Sigma <- U Sigma U
    with U = I + h S, which keeps the covariance PSD whenever U is PSD.
    If U dips below PSD the step size is halved (up to 10 times, each
    counted) before applying; repeated failure aborts.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    diag = diagnostics if diagnostics is not None else BwGenDiagnostics()
    h = 1.0 / n_steps
    g = bw.Gaussian(init.mean.copy(), init.cov.copy())
    traj = [g] if keep_trajectory else None
    eye = np.eye(g.dim)
    for k in range(n_steps):
        v = field(g, k * h)
        h_k = h
        for _ in range(MAX_HALVINGS + 1):
            u = eye + h_k * v.S
            if np.linalg.eigvalsh(u).min() >= 0.0:
                break
            diag.boundary_halvings += 1
            h_k *= 0.5
        else:
            raise GenerationAbort(
                f"step {k}: tangent matrix kept violating the S > -I boundary "
                f"after {MAX_HALVINGS} halvings"
            )
        mean = g.mean + h_k * v.a
        cov = linalg.symmetrize(u @ g.cov @ u)
        g = bw.Gaussian(mean, cov)
        if keep_trajectory:
            traj.append(g)
    return (g, traj, diag) if keep_trajectory else (g, None, diag)


def generate_bw_euclidean(field, init: bw.Gaussian, n_steps: int = DEFAULT_BW_STEPS,
                          diagnostics: BwGenDiagnostics | None = None):
    """Baseline generation: straight Euler on (m, Sigma) with PSD projection.

    Used by the Frobenius and Euclidean-derivative baselines; counts how
    often eigenvalue truncation actually had to clip a negative
    eigenvalue (the degenerate-covariance diagnostic).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    diag = diagnostics if diagnostics is not None else BwGenDiagnostics()
    h = 1.0 / n_steps
    mean = init.mean.copy()
    cov = init.cov.copy()
    for k in range(n_steps):
        g = bw.Gaussian(mean, linalg.psd_project(cov))
        v = field(g, k * h)
        mean = mean + h * v.a
        cov = linalg.symmetrize(cov + h * v.S)
        vals = np.linalg.eigvalsh(cov)
        tol = linalg.PSD_TOL * max(linalg.spectral_radius_bound(cov), 1.0)
        if vals.min() < -tol:
            diag.projections += 1
        cov = linalg.psd_project(cov)
    return bw.Gaussian(mean, cov), None, diag


def generate_pc(field, init: PointCloud, n_steps: int = DEFAULT_PC_STEPS,
                keep_trajectory: bool = False):
    """Forward-Euler integration of the point-cloud field.

    Point count and weights are preserved; a non-finite field aborts
    with the step index.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    h = 1.0 / n_steps
    pts = init.points.copy()
    traj = [PointCloud(pts.copy(), init.weights.copy())] if keep_trajectory else None
    for k in range(n_steps):
        vel = np.asarray(field(pts, k * h))
        if not np.all(np.isfinite(vel)):
            raise GenerationAbort(f"step {k}: non-finite velocity field")
        pts = pts + h * vel
        if keep_trajectory:
            traj.append(PointCloud(pts.copy(), init.weights.copy()))
    out = PointCloud(pts, init.weights.copy())
    return (out, traj) if keep_trajectory else (out, None)
