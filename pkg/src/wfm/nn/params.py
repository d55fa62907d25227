"""Parameter stores, initializers, and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"WFMCKPT1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class MlpDescriptor:
    """Residual MLP: embed -> layers x (layernorm(h + relu(Wh+b))) -> linear."""

    in_dim: int
    out_dim: int
    hidden: int = 256
    layers: int = 6
    time_features: int = 8
    label_vocab: int = 0
    label_dim: int = 16

    kind: str = field(default="mlp", init=False)

    @property
    def input_width(self) -> int:
        width = self.in_dim + 2 * self.time_features
        if self.label_vocab > 0:
            width += self.label_dim
        return width


@dataclass
class TransformerDescriptor:
    """Set transformer over point tokens (post-norm attention blocks)."""

    point_dim: int
    embed: int = 128
    heads: int = 4
    blocks: int = 4
    ff_multiplier: int = 2
    time_features: int = 8
    label_vocab: int = 0

    kind: str = field(default="transformer", init=False)

    def __post_init__(self):
        if self.embed % self.heads != 0:
            raise ValueError(
                f"embed dim {self.embed} not divisible by {self.heads} heads"
            )


@dataclass
class ModelParams:
    """Named tensor slots plus the architecture descriptor."""

    descriptor: MlpDescriptor | TransformerDescriptor
    slots: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.descriptor, {k: v.copy() for k, v in self.slots.items()})


def init_mlp_params(desc: MlpDescriptor, rng: np.random.Generator) -> ModelParams:
    slots: dict[str, np.ndarray] = {}
    width = desc.input_width
    slots["embed_W"] = rng.normal(0.0, np.sqrt(2.0 / width), (width, desc.hidden))
    slots["embed_b"] = np.zeros(desc.hidden)
    for i in range(desc.layers):
        slots[f"layer{i}_W"] = rng.normal(
            0.0, np.sqrt(2.0 / desc.hidden), (desc.hidden, desc.hidden)
        )
        slots[f"layer{i}_b"] = np.zeros(desc.hidden)
        slots[f"layer{i}_ln_g"] = np.ones(desc.hidden)
        slots[f"layer{i}_ln_b"] = np.zeros(desc.hidden)
    # zero-initialized projection: a fresh model predicts the zero field
    slots["out_W"] = np.zeros((desc.hidden, desc.out_dim))
    slots["out_b"] = np.zeros(desc.out_dim)
    if desc.label_vocab > 0:
        slots["label_emb"] = rng.normal(0.0, 0.02, (desc.label_vocab, desc.label_dim))
    return ModelParams(desc, slots)


def init_transformer_params(
    desc: TransformerDescriptor, rng: np.random.Generator
) -> ModelParams:
    e = desc.embed
    f = desc.ff_multiplier * e
    slots: dict[str, np.ndarray] = {}
    slots["embed_W"] = rng.normal(0.0, np.sqrt(1.0 / desc.point_dim), (desc.point_dim, e))
    slots["embed_b"] = np.zeros(e)
    slots["time_W"] = rng.normal(0.0, np.sqrt(1.0 / (2 * desc.time_features)),
                                 (2 * desc.time_features, e))
    slots["time_b"] = np.zeros(e)
    if desc.label_vocab > 0:
        slots["label_emb"] = rng.normal(0.0, 0.02, (desc.label_vocab, e))
    for i in range(desc.blocks):
        for nm in ("Wq", "Wk", "Wv", "Wo"):
            slots[f"block{i}_{nm}"] = rng.normal(0.0, np.sqrt(1.0 / e), (e, e))
        slots[f"block{i}_attn_b"] = np.zeros(e)
        slots[f"block{i}_ln1_g"] = np.ones(e)
        slots[f"block{i}_ln1_b"] = np.zeros(e)
        slots[f"block{i}_fc1_W"] = rng.normal(0.0, np.sqrt(2.0 / e), (e, f))
        slots[f"block{i}_fc1_b"] = np.zeros(f)
        slots[f"block{i}_fc2_W"] = rng.normal(0.0, np.sqrt(2.0 / f), (f, e))
        slots[f"block{i}_fc2_b"] = np.zeros(e)
        slots[f"block{i}_ln2_g"] = np.ones(e)
        slots[f"block{i}_ln2_b"] = np.zeros(e)
    slots["out_W"] = np.zeros((e, desc.point_dim))
    slots["out_b"] = np.zeros(desc.point_dim)
    return ModelParams(desc, slots)


def _descriptor_to_dict(desc) -> dict:
    d = asdict(desc)
    d["kind"] = desc.kind
    return d


def _descriptor_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "mlp":
        return MlpDescriptor(**d)
    if kind == "transformer":
        return TransformerDescriptor(**d)
    raise CheckpointError(f"unknown descriptor kind {kind!r}")


def save_checkpoint(path, models: dict[str, ModelParams], extra: dict | None = None):
    """Write a versioned binary container.

    Layout: magic, u64 little-endian header length, UTF-8 JSON header,
    then the raw little-endian float64 tensors concatenated in header
    order.  Round-trips bit-exactly.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "models": {},
    }
    payload = bytearray()
    # payload order must match the header, which is serialized with
    # sorted keys: iterate models in sorted order too
    for model_name in sorted(models):
        params = models[model_name]
        slot_meta = []
        for slot_name in sorted(params.slots):
            arr = np.ascontiguousarray(params.slots[slot_name], dtype="<f8")
            slot_meta.append({"name": slot_name, "shape": list(arr.shape)})
            payload.extend(arr.tobytes())
        header["models"][model_name] = {
            "descriptor": _descriptor_to_dict(params.descriptor),
            "slots": slot_meta,
        }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path):
    """Read a checkpoint; returns (models dict, extra dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        models = {}
        for model_name, meta in header["models"].items():
            desc = _descriptor_from_dict(meta["descriptor"])
            slots = {}
            for slot in meta["slots"]:
                shape = tuple(slot["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(8 * count)
                if len(raw) != 8 * count:
                    raise CheckpointError(f"truncated tensor {slot['name']!r}")
                slots[slot["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            models[model_name] = ModelParams(desc, slots)
    return models, header.get("extra", {})
