"""Training loops for flow matching over Gaussians and point clouds.

Covers the conditional-path losses (Riemannian Gaussian flow matching
plus the Frobenius and Euclidean baselines, and the point-cloud loss
with entropic interpolants), minibatch OT pairing, and the seeded,
deterministic outer loop with run-directory bookkeeping.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bw, entropic, sources
from .nn import models, optim, params as nnp, tape as T

LOSS_LOG_EVERY = 100

RIEMANNIAN = "riemannian"
FROBENIUS = "frobenius"
EUCLID_BW = "euclid-bw"
BASELINES = (RIEMANNIAN, FROBENIUS, EUCLID_BW)


class NumericalAbort(RuntimeError):
    """Raised when a NaN loss/gradient is hit; carries the step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class TrainConfig:
    geometry: str = "bw"  # "bw" | "pc"
    steps: int = 5000
    batch_size: int = 32
    base_lr: float = 1e-3
    lr_decay: float = 0.97
    lr_decay_every: int = 1000
    seed: int = 0
    baseline: str = RIEMANNIAN
    conditional: bool = False
    # entropic OT
    epsilon: float = entropic.DEFAULT_EPSILON
    epsilon_normalized: bool = True
    sinkhorn_iters: int = entropic.DEFAULT_MAX_ITERS
    sinkhorn_tol: float = entropic.DEFAULT_TOL
    # pairing / interpolant; multisample=None resolves per geometry
    multisample: bool | None = None
    pairing_epsilon: float = 0.05
    interpolant: str = "auto"  # "auto" | "rounding" | "entropic-map"
    # bw only: evaluate each pair at this many time samples per step;
    # cheap variance reduction that leaves the pair batch size unchanged
    t_samples: int = 1
    # architectures
    hidden: int = 256
    layers: int = 6
    time_features: int = 8
    embed: int = 128
    heads: int = 4
    blocks: int = 4
    wishart_dof: int | None = None
    # bookkeeping
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.geometry not in ("bw", "pc"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.baseline != RIEMANNIAN and self.geometry != "bw":
            raise ValueError("baselines only apply to the bw geometry")
        for name in ("steps", "batch_size"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.t_samples < 1:
            raise ValueError("t_samples must be >= 1")
        if self.base_lr <= 0 or self.epsilon <= 0:
            raise ValueError("base_lr and epsilon must be positive")

    @classmethod
    def paper_scale(cls, geometry: str, **overrides) -> "TrainConfig":
        """Full-size presets as reported; desk runs use the defaults."""
        if geometry == "bw":
            base = dict(geometry="bw", steps=100_000, batch_size=128, hidden=1024)
        else:
            base = dict(geometry="pc", steps=500_000, batch_size=64,
                        embed=512, blocks=6, heads=4)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk_pc(cls, **overrides) -> "TrainConfig":
        base = dict(geometry="pc", steps=20_000, batch_size=16)
        base.update(overrides)
        return cls(**base)

    def resolve_multisample(self, variable_size: bool) -> bool:
        if self.multisample is not None:
            return self.multisample
        if self.geometry == "bw":
            return True
        return not variable_size

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    models: dict
    source_spec: object
    loss_trace: list  # (step, loss, lr)
    config: TrainConfig
    label_vocab: int = 0
    diagnostics: dict = field(default_factory=dict)


def empirical_gaussian(cloud: entropic.PointCloud) -> bw.Gaussian:
    """Moment summary of one cloud, used as a cheap pairing surrogate."""
    mean = np.average(cloud.points, axis=0, weights=cloud.weights)
    centered = cloud.points - mean
    cov = (centered * cloud.weights[:, None]).T @ centered
    return bw.Gaussian(mean, cov + 1e-12 * np.eye(cloud.dim))


def multisample_pair(src_batch, dst_batch, cfg: TrainConfig):
    """OT assignment of a minibatch: squared-W2 cost between Gaussian
    summaries, entropic solve, greedy rounding to a permutation.

    Returns perm with perm[i] = target index assigned to source i; every
    batch element is used exactly once.
    """
    if len(src_batch) != len(dst_batch):
        raise ValueError("batch sizes differ")
    if isinstance(src_batch[0], entropic.PointCloud):
        src_g = [empirical_gaussian(c) for c in src_batch]
        dst_g = [empirical_gaussian(c) for c in dst_batch]
    else:
        src_g, dst_g = list(src_batch), list(dst_batch)
    C = bw.frechet_cost_matrix(src_g, dst_g)
    B = len(src_batch)
    w = np.full(B, 1.0 / B)
    eps = entropic.effective_epsilon(C, cfg.pairing_epsilon, normalized=True)
    plan = entropic.sinkhorn(C, w, w, eps, max_iters=cfg.sinkhorn_iters,
                             tol=cfg.sinkhorn_tol)
    return entropic.round_to_permutation(plan)


def _bw_interpolation_batch(pairs, ts):
    """McCann interpolants plus Riemannian and Euclidean velocity targets."""
    means_t, covs_t, vel_a, vel_bw, vel_eu = [], [], [], [], []
    for (src, dst), t in zip(pairs, ts):
        C = bw.bw_ot_matrix(src, dst)
        mu_t = bw.bw_mccann(src, dst, t, ot_matrix=C)
        v = bw.bw_velocity(src, dst, t, ot_matrix=C)
        eye = np.eye(src.dim)
        T_t = (1.0 - t) * eye + t * C
        dT = C - eye
        sig_e = dT @ src.cov @ T_t + T_t @ src.cov @ dT
        means_t.append(mu_t.mean)
        covs_t.append(mu_t.cov)
        vel_a.append(v.a)
        vel_bw.append(v.S)
        vel_eu.append(0.5 * (sig_e + sig_e.T))
    return (np.stack(means_t), np.stack(covs_t), np.stack(vel_a),
            np.stack(vel_bw), np.stack(vel_eu))


def bw_fm_loss(params_mean, params_cov, pairs, ts, labels=None,
               baseline: str = RIEMANNIAN):
    """Batched Gaussian flow-matching loss; returns (loss node, tape).

    Riemannian: match the geodesic velocity in the tangent norm at the
    interpolant.  Euclidean baseline: match the Euclidean covariance
    derivative, still in the tangent norm.  Frobenius baseline: match
    the Euclidean derivative in the plain concatenated squared norm.
    """
    ts = np.asarray(ts, dtype=float).reshape(-1)
    means_t, covs_t, vel_a, vel_bw, vel_eu = _bw_interpolation_batch(pairs, ts)
    B = means_t.shape[0]
    tp = T.Tape()
    a_node, S_node = models.bw_field_batch(
        params_mean, params_cov, means_t, covs_t, ts, labels=labels, tp=tp
    )
    target_S = vel_bw if baseline == RIEMANNIAN else vel_eu
    res_a = T.sub(a_node, T.constant(vel_a))
    res_S = T.sub(S_node, T.constant(target_S))
    mean_term = T.ssum(T.mul(res_a, res_a))
    if baseline == FROBENIUS:
        cov_term = T.ssum(T.mul(res_S, res_S))
    else:
        # Tr(dS Sigma dS) == <Sigma, dS @ dS> for symmetric dS
        cov_term = T.ssum(T.mul(T.constant(covs_t), T.matmul(res_S, res_S)))
    loss = T.scale(T.add(mean_term, cov_term), 1.0 / B)
    return loss, tp


def pc_transport_targets(src: entropic.PointCloud, dst: entropic.PointCloud,
                         cfg: TrainConfig):
    """Approximate OT images T(X) of the source points.

    Equal sizes use the greedy-rounded permutation of the entropic
    coupling; unequal sizes (or an explicit config choice) use the
    entropic out-of-sample map.  Returns (mapped points, path name).
    """
    C = entropic.cost_matrix(src, dst)
    eps = entropic.effective_epsilon(C, cfg.epsilon, cfg.epsilon_normalized)
    plan = entropic.sinkhorn(C, src.weights, dst.weights, eps,
                             max_iters=cfg.sinkhorn_iters, tol=cfg.sinkhorn_tol)
    use_rounding = cfg.interpolant == "rounding" or (
        cfg.interpolant == "auto" and src.n == dst.n
    )
    if use_rounding and src.n != dst.n:
        raise ValueError("rounding interpolant requires equal-size clouds")
    if use_rounding:
        perm = entropic.round_to_permutation(plan)
        return dst.points[perm], "rounding"
    return entropic.entropic_map(plan, dst, src.points), "entropic-map"


def pc_fm_loss(params, pairs, ts, cfg: TrainConfig, labels=None):
    """Batched point-cloud flow-matching loss; returns (node, tape, paths).

    Per pair: displacement targets from the approximate OT map, the
    interpolant X_t = (1-t) X + t T(X), and a mean-over-points squared
    residual of the predicted field.
    """
    tp = T.Tape()
    terms = []
    paths = []
    for i, ((src, dst), t) in enumerate(zip(pairs, ts)):
        mapped, path = pc_transport_targets(src, dst, cfg)
        paths.append(path)
        disp = mapped - src.points
        x_t = src.points + t * disp
        label = labels[i] if labels is not None else None
        out = models.pc_field_forward(params, x_t, t, label=label, tp=tp)
        res = T.sub(out, T.constant(disp))
        terms.append(T.scale(T.ssum(T.mul(res, res)), 1.0 / src.n))
    loss = terms[0]
    for term in terms[1:]:
        loss = T.add(loss, term)
    return T.scale(loss, 1.0 / len(terms)), tp, paths


def _split_grads(grads: dict):
    """Route 'mean.'/'cov.'-prefixed slot gradients to their models."""
    mean_g, cov_g = {}, {}
    for name, g in grads.items():
        if name.startswith("mean."):
            mean_g[name[len("mean."):]] = g
        elif name.startswith("cov."):
            cov_g[name[len("cov."):]] = g
        else:
            raise KeyError(f"unrouted gradient slot {name!r}")
    return mean_g, cov_g


def _label_vocab(dataset) -> int:
    if dataset.labels is None:
        return 0
    return int(max(dataset.labels)) + 1


def train(cfg: TrainConfig, dataset, run_dir=None, progress=None) -> TrainResult:
    """Run the full training loop; deterministic under cfg.seed.

    When ``run_dir`` is given, writes a config snapshot, a loss CSV
    (step,loss,lr), periodic checkpoints, and the final checkpoint.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    vocab = _label_vocab(dataset) if cfg.conditional else 0
    if cfg.conditional and vocab == 0:
        raise ValueError("conditional training requires a labeled dataset")

    if cfg.geometry == "bw":
        spec = sources.fit_source_bw(dataset.items, dof=cfg.wishart_dof)
        d = dataset.dim
        tri = d * (d + 1) // 2
        desc_mean = nnp.MlpDescriptor(
            in_dim=d + tri, out_dim=d, hidden=cfg.hidden, layers=cfg.layers,
            time_features=cfg.time_features, label_vocab=vocab)
        desc_cov = nnp.MlpDescriptor(
            in_dim=d + tri, out_dim=tri, hidden=cfg.hidden, layers=cfg.layers,
            time_features=cfg.time_features, label_vocab=vocab)
        model = {
            "mean": nnp.init_mlp_params(desc_mean, rng),
            "cov": nnp.init_mlp_params(desc_cov, rng),
        }
        opt = {name: optim.OptimizerState(cfg.base_lr, cfg.lr_decay, cfg.lr_decay_every)
               for name in model}
        variable_size = False
    else:
        spec = sources.fit_source_pc(dataset.items)
        sizes = {c.n for c in dataset.items}
        variable_size = len(sizes) > 1
        desc = nnp.TransformerDescriptor(
            point_dim=dataset.dim, embed=cfg.embed, heads=cfg.heads,
            blocks=cfg.blocks, time_features=cfg.time_features, label_vocab=vocab)
        model = {"field": nnp.init_transformer_params(desc, rng)}
        opt = {"field": optim.OptimizerState(cfg.base_lr, cfg.lr_decay,
                                             cfg.lr_decay_every)}

    use_ms = cfg.resolve_multisample(variable_size)
    trace = []
    path_counts: dict[str, int] = {}
    last_good = {k: v.copy() for k, v in model.items()}

    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w") as fh:
            json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)

    def checkpoint(path_name, step, which=None):
        if not run_dir:
            return
        save_checkpoint_bundle(os.path.join(run_dir, path_name),
                               which if which is not None else model,
                               cfg, spec, vocab, step)

    k_times = cfg.t_samples if cfg.geometry == "bw" else 1
    for step in range(1, cfg.steps + 1):
        ts = rng.uniform(0.0, 1.0, cfg.batch_size * k_times)
        idx = rng.integers(0, len(dataset), cfg.batch_size)
        targets = [dataset.items[i] for i in idx]
        if cfg.geometry == "bw":
            srcs = [sources.sample_source_bw(spec, rng) for _ in range(cfg.batch_size)]
        else:
            srcs = [
                sources.sample_source_pc(spec, tgt.n, rng) for tgt in targets
            ]
        if use_ms and cfg.batch_size > 1:
            perm = multisample_pair(srcs, targets, cfg)
            targets = [targets[j] for j in perm]
            idx = idx[perm]
        labels = None
        if vocab:
            labels = [int(dataset.labels[i]) for i in idx]

        pairs = list(zip(srcs, targets))
        if cfg.geometry == "bw":
            if k_times > 1:
                pairs = [p for p in pairs for _ in range(k_times)]
                if labels is not None:
                    labels = [l for l in labels for _ in range(k_times)]
            loss_node, tp = bw_fm_loss(model["mean"], model["cov"], pairs, ts,
                                       labels=labels, baseline=cfg.baseline)
        else:
            loss_node, tp, paths = pc_fm_loss(model["field"], pairs, ts, cfg,
                                              labels=labels)
            for p in paths:
                path_counts[p] = path_counts.get(p, 0) + 1
        loss = float(loss_node.value)
        if not np.isfinite(loss):
            checkpoint("last_good.wfm", step - 1, which=last_good)
            raise NumericalAbort(step, f"non-finite loss {loss!r}")
        grads = T.backward(tp, loss_node)
        try:
            if cfg.geometry == "bw":
                mean_g, cov_g = _split_grads(grads)
                lr = opt["mean"].learning_rate()
                optim.adam_step(opt["mean"], model["mean"].slots, mean_g)
                optim.adam_step(opt["cov"], model["cov"].slots, cov_g)
            else:
                lr = opt["field"].learning_rate()
                optim.adam_step(opt["field"], model["field"].slots, grads)
        except optim.NanGradientError as exc:
            checkpoint("last_good.wfm", step - 1, which=last_good)
            raise NumericalAbort(step, str(exc)) from exc

        if step == 1 or step % LOSS_LOG_EVERY == 0:
            trace.append((step, loss, lr))
            if progress:
                progress(step, loss)
        if run_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            checkpoint(f"ckpt_{step:07d}.wfm", step)
            last_good = {k: v.copy() for k, v in model.items()}

    result = TrainResult(
        models=model, source_spec=spec, loss_trace=trace, config=cfg,
        label_vocab=vocab, diagnostics={"interpolant_paths": path_counts},
    )
    if run_dir:
        checkpoint("final.wfm", cfg.steps)
        with open(os.path.join(run_dir, "loss.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "lr"])
            writer.writerows(trace)
        with open(os.path.join(run_dir, "diagnostics.json"), "w") as fh:
            json.dump(result.diagnostics, fh, indent=2, sort_keys=True)
    return result


def _spec_to_json(spec) -> dict:
    if isinstance(spec, sources.BwSourceSpec):
        return {
            "kind": "bw",
            "mean_loc": spec.mean_loc.tolist(),
            "mean_scale": spec.mean_scale.tolist(),
            "wishart_scale": spec.wishart_scale.tolist(),
            "dof": spec.dof,
        }
    return {
        "kind": "pc",
        "factor_mean": spec.factor_mean.tolist(),
        "factor_std": spec.factor_std,
        "dim": spec.dim,
        "sizes": list(spec.sizes),
    }


def spec_from_json(d: dict):
    if d["kind"] == "bw":
        return sources.BwSourceSpec(
            np.asarray(d["mean_loc"]), np.asarray(d["mean_scale"]),
            np.asarray(d["wishart_scale"]), int(d["dof"]))
    return sources.PcSourceSpec(
        np.asarray(d["factor_mean"]), float(d["factor_std"]),
        int(d["dim"]), list(d["sizes"]))


def save_checkpoint_bundle(path, model, cfg: TrainConfig, spec, vocab: int,
                           step: int):
    nnp.save_checkpoint(path, model, extra={
        "geometry": cfg.geometry,
        "baseline": cfg.baseline,
        "config": cfg.to_json(),
        "source_spec": _spec_to_json(spec),
        "label_vocab": vocab,
        "step": step,
    })


def load_checkpoint_bundle(path):
    model, extra = nnp.load_checkpoint(path)
    spec = spec_from_json(extra["source_spec"])
    cfg = TrainConfig.from_json(extra["config"])
    return model, cfg, spec, extra
