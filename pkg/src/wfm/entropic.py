"""Entropic optimal transport between discrete measures.

Log-domain Sinkhorn over dual potentials (naive matrix scaling
underflows at the small regularization weights used for training),
greedy rounding of couplings to permutations, the entropic
out-of-sample transport map, and a brute-force exact solver for small
instances used as a test oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPSILON = 0.002
DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-4


class ShapeMismatchError(ValueError):
    pass


@dataclass
class PointCloud:
    """n points in R^d with nonnegative weights summing to one."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        n = self.points.shape[0]
        if n < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        else:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if self.weights.shape[0] != n:
                raise ShapeMismatchError("weights length does not match points")
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")
            if abs(self.weights.sum() - 1.0) > 1e-9:
                raise ValueError("weights must sum to 1")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class EntropicPlan:
    """Sinkhorn output: coupling, dual potentials, and diagnostics."""

    coupling: np.ndarray
    f_pot: np.ndarray
    g_pot: np.ndarray
    epsilon: float
    iterations_run: int
    marginal_error: float


def cost_matrix(src: PointCloud, dst: PointCloud):
    """Squared Euclidean cost matrix C_ij = ||x_i - y_j||^2."""
    if src.dim != dst.dim:
        raise ShapeMismatchError(f"dims differ: {src.dim} vs {dst.dim}")
    diff = src.points[:, None, :] - dst.points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def effective_epsilon(C, epsilon: float, normalized: bool = True) -> float:
    """Resolve the regularization weight.

    With ``normalized`` (the default) epsilon multiplies the mean of the
    cost matrix, keeping the softmax temperature scale-free across
    datasets; the raw absolute mode is kept for strict replication.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not normalized:
        return float(epsilon)
    scale = float(np.mean(C))
    return float(epsilon * scale) if scale > 0 else float(epsilon)


def _logsumexp(a, axis):
    amax = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def sinkhorn(
    C,
    src_w,
    dst_w,
    epsilon: float,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> EntropicPlan:
    """Log-domain Sinkhorn: alternating updates of the dual potentials.

    ``epsilon`` here is the resolved (absolute) regularization weight;
    see :func:`effective_epsilon` for the normalized convention.
    Terminates when the L-infinity marginal violation drops to ``tol``
    or the iteration budget is exhausted.
    """
    C = np.asarray(C, dtype=float)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix contains non-finite entries")
    a = np.asarray(src_w, dtype=float).reshape(-1)
    b = np.asarray(dst_w, dtype=float).reshape(-1)
    if C.shape != (a.shape[0], b.shape[0]):
        raise ShapeMismatchError(f"cost {C.shape} vs weights {a.shape}/{b.shape}")

    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    iters = 0
    err = np.inf
    for iters in range(1, max_iters + 1):
        f = epsilon * (log_a - _logsumexp((g[None, :] - C) / epsilon, axis=1))
        g = epsilon * (log_b - _logsumexp((f[:, None] - C) / epsilon, axis=0))
        P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
        err = max(
            float(np.abs(P.sum(axis=1) - a).max()),
            float(np.abs(P.sum(axis=0) - b).max()),
        )
        if err <= tol:
            break
    P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    return EntropicPlan(
        coupling=P,
        f_pot=f,
        g_pot=g,
        epsilon=float(epsilon),
        iterations_run=iters,
        marginal_error=err,
    )


def round_to_permutation(plan: EntropicPlan):
    """Greedily round a square coupling to a permutation.

    Repeatedly take the global argmax entry, record the assignment, and
    zero out its row and column.  Ties break toward the lowest (row,
    col) index.  Returns perm with perm[i] = assigned column of row i.
    """
    P = np.array(plan.coupling, dtype=float)
    m, n = P.shape
    if m != n:
        raise ShapeMismatchError(f"rounding requires a square coupling, got {P.shape}")
    perm = np.full(n, -1, dtype=int)
    work = P.copy()
    for _ in range(n):
        flat = int(np.argmax(work))  # first occurrence = lex-lowest tie-break
        i, j = divmod(flat, n)
        perm[i] = j
        work[i, :] = -np.inf
        work[:, j] = -np.inf
    return perm


def entropic_map(plan: EntropicPlan, dst: PointCloud, query):
    """Out-of-sample entropic transport map.

    Each query point maps to the softmax-weighted average of dst points
    with logits (g_j - ||x - y_j||^2) / eps; the target weights are
    already absorbed into the potential g (the coupling convention is
    P_ij = exp((f_i + g_j - C_ij) / eps)).  Stabilized by max-logit
    subtraction; outputs lie in the convex hull of dst.
    """
    query = np.atleast_2d(np.asarray(query, dtype=float))
    if not np.all(np.isfinite(query)):
        raise ValueError("query contains non-finite coordinates")
    if query.shape[1] != dst.dim:
        raise ShapeMismatchError("query dim does not match target cloud")
    eps = plan.epsilon
    diff = query[:, None, :] - dst.points[None, :, :]
    sq = np.einsum("qjd,qjd->qj", diff, diff)
    logits = (plan.g_pot[None, :] - sq) / eps
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w @ dst.points


def transport_cost(plan: EntropicPlan, C) -> float:
    """Linear transport cost <C, P> of the entropic coupling."""
    C = np.asarray(C, dtype=float)
    if C.shape != plan.coupling.shape:
        raise ShapeMismatchError(f"cost {C.shape} vs coupling {plan.coupling.shape}")
    return float(np.sum(plan.coupling * C))


MAX_EXACT_POINTS = 8


def exact_ot_small(src: PointCloud, dst: PointCloud):
    """Exhaustive OT between equal-size uniform clouds (test oracle).

    Minimizes the mean squared displacement over all n! permutations;
    capped at n = 8 to bound runtime.
    """
    if src.n != dst.n:
        raise ShapeMismatchError("exact solver requires equal-size clouds")
    n = src.n
    if n > MAX_EXACT_POINTS:
        raise ValueError(f"exact solver capped at n={MAX_EXACT_POINTS}, got {n}")
    C = cost_matrix(src, dst)
    best_perm = None
    best_cost = np.inf
    for perm in itertools.permutations(range(n)):
        cost = float(C[np.arange(n), perm].mean())
        if cost < best_cost:
            best_cost = cost
            best_perm = perm
    return np.array(best_perm, dtype=int), best_cost
