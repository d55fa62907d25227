"""Synthetic dataset generators, JSONL persistence, and ingestion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .bw import Gaussian
from .entropic import PointCloud

DATASET_VERSION = 1

SPIRAL_TURNS_ANGLE = 3.0 * np.pi
SPIRAL_R0 = 0.5
SPIRAL_R1 = 1.5
TANGENT_VAR = 0.02
NORMAL_VAR = 0.005


class DatasetError(ValueError):
    pass


@dataclass
class GaussianDataset:
    items: list
    dim: int
    labels: list | None = None
    metadata: dict = field(default_factory=dict)

    kind = "gaussian"

    def __post_init__(self):
        for g in self.items:
            if g.dim != self.dim:
                raise DatasetError("dataset dims are not uniform")
        if self.labels is not None and len(self.labels) != len(self.items):
            raise DatasetError("labels length does not match items")

    def __len__(self):
        return len(self.items)


@dataclass
class PointCloudDataset:
    items: list
    dim: int
    labels: list | None = None
    metadata: dict = field(default_factory=dict)

    kind = "pointcloud"

    def __post_init__(self):
        for c in self.items:
            if c.dim != self.dim:
                raise DatasetError("dataset dims are not uniform")
        if self.labels is not None and len(self.labels) != len(self.items):
            raise DatasetError("labels length does not match items")

    def __len__(self):
        return len(self.items)


def _tangent_cov_2d(tangent):
    """2D covariance with TANGENT_VAR along `tangent`, NORMAL_VAR across."""
    u = np.asarray(tangent, dtype=float)
    u = u / np.linalg.norm(u)
    v = np.array([-u[1], u[0]])
    return TANGENT_VAR * np.outer(u, u) + NORMAL_VAR * np.outer(v, v)


def make_spiral_gaussians(count: int, noise: float = 0.0, seed: int = 0) -> GaussianDataset:
    """Gaussians centered on an Archimedean spiral.

    Means sit at r = 0.5 + 1.5 * theta / (3 pi) for theta evenly spaced
    on [0, 3 pi]; each covariance is aligned with the local tangent
    (variance 0.02) and normal (0.005).  `noise` jitters the means.
    """
    if count < 1:
        raise DatasetError("count must be >= 1")
    rng = np.random.default_rng(seed)
    thetas = np.linspace(0.0, SPIRAL_TURNS_ANGLE, count) if count > 1 else np.array([0.0])
    items = []
    r_rate = SPIRAL_R1 / SPIRAL_TURNS_ANGLE
    for theta in thetas:
        r = SPIRAL_R0 + SPIRAL_R1 * theta / SPIRAL_TURNS_ANGLE
        mean = np.array([r * np.cos(theta), r * np.sin(theta)])
        if noise > 0:
            mean = mean + noise * rng.standard_normal(2)
        tangent = np.array(
            [r_rate * np.cos(theta) - r * np.sin(theta),
             r_rate * np.sin(theta) + r * np.cos(theta)]
        )
        items.append(Gaussian(mean, _tangent_cov_2d(tangent)))
    meta = {"generator": "spiral", "count": count, "noise": noise, "seed": seed}
    return GaussianDataset(items, dim=2, metadata=meta)


def make_moons_gaussians(count: int, seed: int = 0, noise: float = 0.0) -> GaussianDataset:
    """Gaussians on two interleaved half-circles; labels 0/1 split evenly."""
    if count < 1:
        raise DatasetError("count must be >= 1")
    rng = np.random.default_rng(seed)
    n0 = (count + 1) // 2
    n1 = count - n0
    items, labels = [], []
    for cls, n in ((0, n0), (1, n1)):
        if n == 0:
            continue
        phis = np.linspace(0.0, np.pi, n) if n > 1 else np.array([np.pi / 2])
        for phi in phis:
            if cls == 0:
                mean = np.array([np.cos(phi), np.sin(phi)])
            else:
                mean = np.array([1.0 - np.cos(phi), 0.5 - np.sin(phi)])
            if noise > 0:
                mean = mean + noise * rng.standard_normal(2)
            tangent = np.array([-np.sin(phi), np.cos(phi)])
            items.append(Gaussian(mean, _tangent_cov_2d(tangent)))
            labels.append(cls)
    meta = {"generator": "moons", "count": count, "noise": noise, "seed": seed}
    return GaussianDataset(items, dim=2, labels=labels, metadata=meta)


def make_sphere_gaussians(count: int, seed: int = 0) -> GaussianDataset:
    """Gaussians with means on the unit sphere in 3D.

    Covariances have variance 0.02 in the tangent plane and 0.005 along
    the outward normal.
    """
    if count < 1:
        raise DatasetError("count must be >= 1")
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(count):
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        cov = TANGENT_VAR * (np.eye(3) - np.outer(n, n)) + NORMAL_VAR * np.outer(n, n)
        items.append(Gaussian(n, cov))
    meta = {"generator": "sphere", "count": count, "seed": seed}
    return GaussianDataset(items, dim=3, metadata=meta)


SHAPE_FAMILIES = ("ring", "cross", "box")


def _shape_points(family: str, n: int, rng: np.random.Generator):
    if family == "ring":
        angles = rng.uniform(0.0, 2.0 * np.pi, n)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if family == "cross":
        coord = rng.uniform(-1.0, 1.0, n)
        horizontal = rng.integers(0, 2, n).astype(bool)
        pts = np.zeros((n, 2))
        pts[horizontal, 0] = coord[horizontal]
        pts[~horizontal, 1] = coord[~horizontal]
        return pts
    if family == "box":
        side = rng.integers(0, 4, n)
        coord = rng.uniform(-1.0, 1.0, n)
        pts = np.empty((n, 2))
        pts[:, 0] = np.where(side < 2, coord, np.where(side == 2, -1.0, 1.0))
        pts[:, 1] = np.where(side < 2, np.where(side == 0, -1.0, 1.0), coord)
        return pts
    raise DatasetError(f"unknown shape family {family!r}")


def make_shape_pointclouds(
    family: str,
    count: int,
    n_range: tuple[int, int] = (50, 100),
    jitter: float = 0.02,
    seed: int = 0,
    label: int | None = None,
) -> PointCloudDataset:
    """Point clouds sampled on a 2D contour with Gaussian jitter.

    Cloud sizes are drawn per cloud from `n_range` (inclusive), which
    exercises the variable-size pathway downstream.
    """
    if count < 1:
        raise DatasetError("count must be >= 1")
    if family not in SHAPE_FAMILIES:
        raise DatasetError(f"unknown shape family {family!r}")
    lo, hi = n_range
    if not 1 <= lo <= hi:
        raise DatasetError(f"invalid point-count range {n_range}")
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(count):
        n = int(rng.integers(lo, hi + 1))
        pts = _shape_points(family, n, rng)
        if jitter > 0:
            pts = pts + jitter * rng.standard_normal(pts.shape)
        items.append(PointCloud(pts))
    meta = {
        "generator": "shape", "family": family, "count": count,
        "n_range": [lo, hi], "jitter": jitter, "seed": seed,
    }
    labels = [label] * count if label is not None else None
    return PointCloudDataset(items, dim=2, labels=labels, metadata=meta)


def concat_datasets(datasets):
    """Concatenate datasets of the same kind, keeping labels if all have them."""
    if not datasets:
        raise DatasetError("nothing to concatenate")
    first = datasets[0]
    items, labels = [], []
    have_labels = all(ds.labels is not None for ds in datasets)
    for ds in datasets:
        if ds.kind != first.kind or ds.dim != first.dim:
            raise DatasetError("datasets are not compatible")
        items.extend(ds.items)
        if have_labels:
            labels.extend(ds.labels)
    cls = GaussianDataset if first.kind == "gaussian" else PointCloudDataset
    meta = {"generator": "concat", "parts": [ds.metadata for ds in datasets]}
    return cls(items, dim=first.dim, labels=labels if have_labels else None, metadata=meta)


def image_to_pointcloud(grid, threshold: float) -> PointCloud:
    """Above-threshold pixel centers as a cloud in the unit square.

    Pixel (row, col) maps to ((col + 0.5) / w, (h - row - 0.5) / h) so
    images render upright; weights are uniform.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    h, w = grid.shape
    rows, cols = np.nonzero(grid > threshold)
    if rows.size == 0:
        raise DatasetError("no pixels above threshold; empty cloud")
    pts = np.stack([(cols + 0.5) / w, (h - rows - 0.5) / h], axis=1)
    return PointCloud(pts)


def read_pgm(path):
    """Parse a plain (P2) PGM file into a float array scaled to [0, 1]."""
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise DatasetError(f"{path}: expected plain PGM (P2) header")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        values = np.array([int(t) for t in tokens[4:]], dtype=float)
    except (IndexError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed PGM") from exc
    if values.size != w * h:
        raise DatasetError(f"{path}: expected {w * h} pixels, got {values.size}")
    return values.reshape(h, w) / max(maxval, 1)


def save_dataset(path, dataset):
    """Write a dataset as JSONL: one header line plus one record per item."""
    header = {
        "kind": dataset.kind,
        "dim": dataset.dim,
        "version": DATASET_VERSION,
        "metadata": dataset.metadata,
    }
    rows, cols = np.tril_indices(dataset.dim)
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, item in enumerate(dataset.items):
            if dataset.kind == "gaussian":
                rec = {
                    "mean": item.mean.tolist(),
                    "cov_lower": item.cov[rows, cols].tolist(),
                }
            else:
                rec = {"points": item.points.tolist()}
                if not np.allclose(item.weights, 1.0 / item.n):
                    rec["weights"] = item.weights.tolist()
            if dataset.labels is not None:
                rec["label"] = int(dataset.labels[i])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _unpack_lower(vec, dim):
    rows, cols = np.tril_indices(dim)
    if len(vec) != rows.shape[0]:
        raise DatasetError(f"cov_lower has length {len(vec)}, expected {rows.shape[0]}")
    cov = np.zeros((dim, dim))
    cov[rows, cols] = vec
    cov[cols, rows] = vec
    return cov


def load_dataset(path):
    """Load and validate a JSONL dataset; errors name the failing line."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:1: malformed JSON header") from exc
    kind = header.get("kind")
    if kind not in ("gaussian", "pointcloud"):
        raise DatasetError(f"{path}:1: unknown dataset kind {kind!r}")
    if header.get("version") != DATASET_VERSION:
        raise DatasetError(f"{path}:1: unsupported version {header.get('version')!r}")
    dim = int(header["dim"])
    items, labels = [], []
    any_label = False
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: malformed JSON") from exc
        try:
            if kind == "gaussian":
                mean = np.asarray(rec["mean"], dtype=float)
                if mean.shape != (dim,):
                    raise DatasetError("mean dimension mismatch")
                items.append(Gaussian(mean, _unpack_lower(rec["cov_lower"], dim)))
            else:
                pts = np.asarray(rec["points"], dtype=float)
                if pts.ndim != 2 or pts.shape[1] != dim:
                    raise DatasetError("points dimension mismatch")
                items.append(PointCloud(pts, rec.get("weights")))
        except (KeyError, ValueError, linalg.LinalgError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if "label" in rec:
            any_label = True
            labels.append(int(rec["label"]))
        else:
            labels.append(None)
    if any_label and any(lb is None for lb in labels):
        raise DatasetError(f"{path}: labels present on some records but not all")
    cls = GaussianDataset if kind == "gaussian" else PointCloudDataset
    return cls(
        items,
        dim=dim,
        labels=labels if any_label else None,
        metadata=header.get("metadata", {}),
    )


def split(dataset, test_fraction: float, seed: int = 0):
    """Seeded shuffle-and-split; stratified by label when labels exist."""
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    if dataset.labels is not None:
        by_label: dict[int, list[int]] = {}
        for i, lb in enumerate(dataset.labels):
            by_label.setdefault(lb, []).append(i)
        test_idx = []
        for lb in sorted(by_label):
            idx = np.array(by_label[lb])
            rng.shuffle(idx)
            k = int(round(test_fraction * len(idx)))
            test_idx.extend(idx[:k].tolist())
        test_set = set(test_idx)
        train_idx = [i for i in range(n) if i not in test_set]
    else:
        idx = np.arange(n)
        rng.shuffle(idx)
        k = int(round(test_fraction * n))
        test_idx = idx[:k].tolist()
        train_idx = idx[k:].tolist()
    if not train_idx or not test_idx:
        raise DatasetError("split would leave an empty side")
    cls = GaussianDataset if dataset.kind == "gaussian" else PointCloudDataset

    def subset(indices):
        return cls(
            [dataset.items[i] for i in indices],
            dim=dataset.dim,
            labels=[dataset.labels[i] for i in indices] if dataset.labels else None,
            metadata=dict(dataset.metadata, split="derived"),
        )

    return subset(sorted(train_idx)), subset(sorted(test_idx))
