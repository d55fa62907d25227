"""Forward passes: time features, residual MLPs, and the set transformer.

All passes are written against the tape primitives so a backward call
yields exact gradients.  Inference callers can pass a throwaway tape
and read ``.value`` off the returned nodes.
"""

from __future__ import annotations

import numpy as np

from . import tape as T
from .params import MlpDescriptor, ModelParams, TransformerDescriptor


def fourier_time_features(t, k: int):
    """Geometric frequency ladder: [sin(2pi 2^i t), cos(2pi 2^i t)], i < k.

    Accepts a scalar (returns shape (2k,)) or a batch of times (returns
    (B, 2k)); per-frequency sin/cos pairs are interleaved.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    t = np.asarray(t, dtype=float)
    freqs = 2.0 ** np.arange(k)
    angles = 2.0 * np.pi * t[..., None] * freqs
    out = np.stack([np.sin(angles), np.cos(angles)], axis=-1)
    return out.reshape(t.shape + (2 * k,))


def _label_rows(params: ModelParams, labels, batch: int, tp: T.Tape):
    """Label-embedding rows selected via one-hot matmul (keeps gradients)."""
    vocab = params.slots["label_emb"].shape[0]
    onehot = np.zeros((batch, vocab))
    idx = np.asarray(labels, dtype=int).reshape(-1)
    if idx.shape[0] != batch:
        raise ValueError("labels length does not match batch")
    if np.any(idx < 0) or np.any(idx >= vocab):
        raise ValueError(f"label out of range for vocabulary of {vocab}")
    onehot[np.arange(batch), idx] = 1.0
    return T.matmul(T.constant(onehot), tp.leaf("label_emb", params.slots["label_emb"]))


def mlp_forward(params: ModelParams, features, t_feats, labels=None, tp: T.Tape | None = None):
    """Residual MLP on batched rows.

    ``features`` is (B, in_dim) and ``t_feats`` (B, 2k); they are
    concatenated (plus the label embedding when the descriptor has a
    vocabulary) and pushed through ``layers`` post-norm residual blocks.
    Returns a (B, out_dim) node.
    """
    desc = params.descriptor
    if not isinstance(desc, MlpDescriptor):
        raise TypeError("mlp_forward requires MLP params")
    tp = tp or T.Tape()
    features = np.atleast_2d(np.asarray(features, dtype=float))
    t_feats = np.atleast_2d(np.asarray(t_feats, dtype=float))
    if features.shape[1] != desc.in_dim:
        raise ValueError(f"expected features of dim {desc.in_dim}, got {features.shape}")
    parts = [T.constant(features), T.constant(t_feats)]
    if desc.label_vocab > 0:
        if labels is None:
            labels = np.zeros(features.shape[0], dtype=int)
        parts.append(_label_rows(params, labels, features.shape[0], tp))
    x = T.concat(parts, axis=-1)
    h = T.add(T.matmul(x, tp.leaf("embed_W", params.slots["embed_W"])),
              tp.leaf("embed_b", params.slots["embed_b"]))
    for i in range(desc.layers):
        pre = T.add(T.matmul(h, tp.leaf(f"layer{i}_W", params.slots[f"layer{i}_W"])),
                    tp.leaf(f"layer{i}_b", params.slots[f"layer{i}_b"]))
        h = T.layernorm(T.add(h, T.relu(pre)),
                        tp.leaf(f"layer{i}_ln_g", params.slots[f"layer{i}_ln_g"]),
                        tp.leaf(f"layer{i}_ln_b", params.slots[f"layer{i}_ln_b"]))
    return T.add(T.matmul(h, tp.leaf("out_W", params.slots["out_W"])),
                 tp.leaf("out_b", params.slots["out_b"]))


def tril_indices(d: int):
    return np.tril_indices(d)


def sym_expand_matrix(d: int):
    """Constant (d(d+1)/2, d*d) matrix mapping packed lower-triangular
    vectors to flattened symmetric matrices."""
    rows, cols = np.tril_indices(d)
    m = rows.shape[0]
    E = np.zeros((m, d * d))
    for k, (i, j) in enumerate(zip(rows, cols)):
        E[k, i * d + j] = 1.0
        E[k, j * d + i] = 1.0
    return E


def pack_lower(cov):
    """Pack the lower triangle of one or a stack of symmetric matrices."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[-1]
    rows, cols = np.tril_indices(d)
    return cov[..., rows, cols]


def bw_field_batch(params_mean: ModelParams, params_cov: ModelParams,
                   means, covs, t, labels=None, tp: T.Tape | None = None):
    """Batched Gaussian field: (B,d) means and (B,d,d) covariances in,
    nodes for the (B,d) translation and exactly-symmetric (B,d,d)
    tangent matrices out."""
    tp = tp or T.Tape()
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 2:
        covs = covs[None]
    B, d = means.shape
    t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
    k = params_mean.descriptor.time_features
    feats = np.concatenate([means, pack_lower(covs)], axis=1)
    t_feats = fourier_time_features(t, k)
    # separate tapes share no slots, so prefix the slot names
    a_node = _prefixed_mlp(params_mean, "mean.", feats, t_feats, labels, tp)
    v_node = _prefixed_mlp(params_cov, "cov.", feats, t_feats, labels, tp)
    E = T.constant(sym_expand_matrix(d))
    S_node = T.reshape(T.matmul(v_node, E), (B, d, d))
    return a_node, S_node


def _prefixed_mlp(params: ModelParams, prefix: str, feats, t_feats, labels, tp: T.Tape):
    """mlp_forward with slot names prefixed so two nets share one tape."""
    view = ModelParams(params.descriptor, params.slots)
    sub = _PrefixTape(tp, prefix)
    return mlp_forward(view, feats, t_feats, labels=labels, tp=sub)


class _PrefixTape(T.Tape):
    def __init__(self, inner: T.Tape, prefix: str):
        self.inner = inner
        self.prefix = prefix

    def leaf(self, name, value):
        return self.inner.leaf(self.prefix + name, value)


def attention_block_forward(params: ModelParams, tokens, block: int, tp: T.Tape | None = None):
    """One post-norm transformer block on (n, e) tokens.

    Multihead scaled dot-product self-attention + residual + layernorm,
    then a per-token MLP + residual + layernorm.  No positional
    encoding, so the block is permutation-equivariant.
    """
    desc = params.descriptor
    if not isinstance(desc, TransformerDescriptor):
        raise TypeError("attention_block_forward requires transformer params")
    tp = tp or T.Tape()
    x = tokens if isinstance(tokens, T.Node) else T.constant(np.atleast_2d(tokens))
    n, e = x.shape
    h = desc.heads
    dh = e // h
    p = f"block{block}_"

    def leaf(nm):
        return tp.leaf(p + nm, params.slots[p + nm])

    def heads_split(node):
        return T.transpose(T.reshape(node, (n, h, dh)), (1, 0, 2))

    q = heads_split(T.matmul(x, leaf("Wq")))
    k = heads_split(T.matmul(x, leaf("Wk")))
    v = heads_split(T.matmul(x, leaf("Wv")))
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    ctx = T.matmul(T.softmax(scores), v)
    ctx = T.reshape(T.transpose(ctx, (1, 0, 2)), (n, e))
    attn = T.add(T.matmul(ctx, leaf("Wo")), leaf("attn_b"))
    x = T.layernorm(T.add(x, attn), leaf("ln1_g"), leaf("ln1_b"))
    ff = T.add(
        T.matmul(T.relu(T.add(T.matmul(x, leaf("fc1_W")), leaf("fc1_b"))), leaf("fc2_W")),
        leaf("fc2_b"),
    )
    return T.layernorm(T.add(x, ff), leaf("ln2_g"), leaf("ln2_b"))


def pc_field_forward(params: ModelParams, points, t: float, label=None, tp: T.Tape | None = None):
    """Velocity field over one point cloud.

    Tokens are point embeddings plus a broadcast time (and optional
    label) embedding; attention blocks mix them; a zero-initialized
    projection maps back to point space.  Returns an (n, d) node.
    """
    desc = params.descriptor
    if not isinstance(desc, TransformerDescriptor):
        raise TypeError("pc_field_forward requires transformer params")
    tp = tp or T.Tape()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 1:
        raise ValueError("point cloud must be nonempty")
    if points.shape[1] != desc.point_dim:
        raise ValueError(f"expected points of dim {desc.point_dim}, got {points.shape}")
    t_feat = fourier_time_features(float(t), desc.time_features)[None, :]
    emb = T.add(T.matmul(T.constant(points), tp.leaf("embed_W", params.slots["embed_W"])),
                tp.leaf("embed_b", params.slots["embed_b"]))
    cond = T.add(T.matmul(T.constant(t_feat), tp.leaf("time_W", params.slots["time_W"])),
                 tp.leaf("time_b", params.slots["time_b"]))
    if desc.label_vocab > 0 and label is not None:
        cond = T.add(cond, _label_rows(params, [int(label)], 1, tp))
    x = T.add(emb, cond)
    for i in range(desc.blocks):
        x = attention_block_forward(params, x, i, tp=tp)
    return T.add(T.matmul(x, tp.leaf("out_W", params.slots["out_W"])),
                 tp.leaf("out_b", params.slots["out_b"]))


def bw_field_forward(params_mean: ModelParams, params_cov: ModelParams,
                     gaussian, t: float, label=None):
    """Single-Gaussian convenience wrapper; returns a TangentBW."""
    from .. import bw

    labels = None if label is None else [int(label)]
    a_node, S_node = bw_field_batch(
        params_mean, params_cov, gaussian.mean[None, :], gaussian.cov[None],
        np.array([float(t)]), labels=labels,
    )
    return bw.TangentBW(a_node.value[0], S_node.value[0])
