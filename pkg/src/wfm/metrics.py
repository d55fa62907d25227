"""Generation-quality metrics.

Conventions (fixed across the package): squared distances everywhere,
Chamfer terms are mean-normalized and summed over both directions, and
the entropic transport cost is used as the EMD surrogate (it upper
bounds the exact OT cost).
"""

from __future__ import annotations

import numpy as np

from . import bw, entropic


class MetricError(ValueError):
    pass


def min_bw_to_dataset(generated, reference) -> float:
    """Mean over generated Gaussians of the min squared-W2 distance to
    the reference set."""
    if not generated or not reference:
        raise MetricError("both sets must be nonempty")
    C = bw.frechet_cost_matrix(list(generated), list(reference))
    return float(C.min(axis=1).mean())


def chamfer_sq(a: entropic.PointCloud, b: entropic.PointCloud) -> float:
    """Symmetric Chamfer distance: mean squared nearest-neighbor distance
    from a to b plus the reverse term."""
    if a.dim != b.dim:
        raise MetricError(f"dims differ: {a.dim} vs {b.dim}")
    C = entropic.cost_matrix(a, b)
    return float(C.min(axis=1).mean() + C.min(axis=0).mean())


def emd_sq(a: entropic.PointCloud, b: entropic.PointCloud,
           epsilon: float = entropic.DEFAULT_EPSILON,
           normalized: bool = True,
           max_iters: int = entropic.DEFAULT_MAX_ITERS,
           tol: float = entropic.DEFAULT_TOL) -> float:
    """Entropic transport cost <C, P_eps> between two clouds.

    This upper-bounds the exact (unregularized) OT cost, tightening as
    epsilon decreases.
    """
    if a.dim != b.dim:
        raise MetricError(f"dims differ: {a.dim} vs {b.dim}")
    C = entropic.cost_matrix(a, b)
    eps = entropic.effective_epsilon(C, epsilon, normalized)
    plan = entropic.sinkhorn(C, a.weights, b.weights, eps, max_iters, tol)
    return entropic.transport_cost(plan, C)


def _pairwise(metric: str, samples_a, samples_b, **kwargs):
    if metric == "bw":
        return bw.frechet_cost_matrix(list(samples_a), list(samples_b))
    if metric == "cd":
        fn = chamfer_sq
    elif metric == "emd":
        fn = lambda x, y: emd_sq(x, y, **kwargs)  # noqa: E731
    else:
        raise MetricError(f"unknown metric {metric!r}")
    out = np.empty((len(samples_a), len(samples_b)))
    for i, sa in enumerate(samples_a):
        for j, sb in enumerate(samples_b):
            out[i, j] = fn(sa, sb)
    return out


def _check_kinds(metric: str, samples):
    is_gauss = isinstance(samples[0], bw.Gaussian)
    if metric == "bw" and not is_gauss:
        raise MetricError("bw metric requires Gaussian samples")
    if metric in ("cd", "emd") and is_gauss:
        raise MetricError(f"{metric} metric requires point-cloud samples")


def one_nn_accuracy(generated, reference, metric: str = "cd", **kwargs) -> float:
    """Leave-one-out 1-NN two-sample accuracy on the pooled sets.

    0.5 means the generated samples are indistinguishable from the
    reference set; 1.0 means trivially separable.  Distance ties break
    toward the reference label (pessimistic for the generator).
    """
    if not generated or not reference:
        raise MetricError("both sets must be nonempty")
    _check_kinds(metric, list(generated) + list(reference))
    gg = _pairwise(metric, generated, generated, **kwargs)
    gr = _pairwise(metric, generated, reference, **kwargs)
    rr = _pairwise(metric, reference, reference, **kwargs)
    np.fill_diagonal(gg, np.inf)
    np.fill_diagonal(rr, np.inf)
    correct = 0
    # generated sample: neighbor is generated only if strictly closer
    for i in range(len(generated)):
        if gg[i].min() < gr[i].min():
            correct += 1
    # reference sample: tie also resolves to reference
    for j in range(len(reference)):
        if rr[j].min() <= gr[:, j].min():
            correct += 1
    return correct / (len(generated) + len(reference))


def label_accuracy_1nn(generated, generated_labels, reference, reference_labels,
                       metric: str = "cd", **kwargs) -> float:
    """Fraction of generated samples whose nearest reference sample
    carries the conditioning label; equidistant ties resolve to the
    lowest reference index."""
    if generated_labels is None or reference_labels is None:
        raise MetricError("label accuracy requires labels on both sides")
    if len(generated_labels) != len(generated) or len(reference_labels) != len(reference):
        raise MetricError("labels length mismatch")
    _check_kinds(metric, list(generated) + list(reference))
    D = _pairwise(metric, generated, reference, **kwargs)
    nearest = D.argmin(axis=1)  # argmin takes the first (lowest) index on ties
    hits = sum(
        int(reference_labels[j] == generated_labels[i])
        for i, j in enumerate(nearest)
    )
    return hits / len(generated)
