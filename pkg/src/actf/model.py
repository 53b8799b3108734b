"""Full sequence classifier: tiny per-frame conv backbone, spatial-temporal
pooled branch, the correlated temporal branch, attentive final fusion, and a
linear classification head.

The backbone is strictly 2-D per frame (shared weights, no temporal kernels),
so every bit of temporal mixing in the model flows through the temporal
branch. Ablation variants disable individual stages to isolate its effect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, FormatError, InputError, ShapeError
from . import tensor as T
from .tensor import Tensor
from .sketch import make_plan
from .attention import (
    PairFusionWeights,
    fuse_pair,
    init_pair_fusion,
    init_temporal_attention,
)
from .branch import (
    ActfParams,
    LowLevelFeature,
    extract_actf,
    init_reduction,
)

VARIANTS = ("full", "single-actf", "iccf-only", "no-attn", "spatial-only")


@dataclass(frozen=True)
class ModelDims:
    """All size hyperparameters of one model instance."""

    frames: int
    height: int
    width: int
    conv1_channels: int
    out_channels: int          # C_out: channels of the low-level feature
    sketch_dim: int            # d: channels of the bilinear correlation feature
    n_classes: int
    in_channels: int = 3
    reduce1: int = 0           # hidden widths of the reduction network;
    reduce2: int = 0           # 0 means the default geometric taper

    def __post_init__(self):
        if self.frames < 2:
            raise ConfigError("ModelDims: need at least 2 frames")
        if self.height % 4 or self.width % 4 or self.height < 4 or self.width < 4:
            raise ConfigError(
                f"ModelDims: spatial size {self.height}x{self.width} must be a multiple of 4"
            )
        for name in ("conv1_channels", "out_channels", "sketch_dim", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelDims: {name} must be >= 1")

    @property
    def concat_channels(self) -> int:
        return self.out_channels + self.sketch_dim

    @property
    def r1(self) -> int:
        return self.reduce1 or max(1, self.concat_channels // 2)

    @property
    def r2(self) -> int:
        return self.reduce2 or 2 * self.out_channels

    @property
    def feature_spatial(self) -> tuple:
        # Two stride-2 poolings in the backbone.
        return self.height // 4, self.width // 4


@dataclass
class Backbone:
    """Two 3x3 same-padded conv layers with a stride-2 mean pool after each."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def apply(self, video: Tensor) -> LowLevelFeature:
        x = T.relu(T.conv2d(video, self.w1, self.b1))
        x = T.avg_pool(x, (1, 2, 2), (1, 2, 2))
        x = T.relu(T.conv2d(x, self.w2, self.b2))
        x = T.avg_pool(x, (1, 2, 2), (1, 2, 2))
        return LowLevelFeature(x)


@dataclass
class ModelParams:
    dims: ModelDims
    seed: int
    variant: str
    backbone: Backbone
    actf: ActfParams
    final_fusion: PairFusionWeights
    clf_w: Tensor
    clf_b: Tensor


# Inputs are sparse (a small bright blob on a zero background), so fan-in
# scaled init leaves the pooled activations far too small for a single
# global learning rate. The extra gain keeps both feature vectors near
# unit scale at init.
_CONV_GAIN = 6.0


def _conv_layer(c_in, c_out, k, rng):
    bound = _CONV_GAIN * np.sqrt(3.0 / (c_in * k * k))
    w = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)), requires_grad=True)
    b = Tensor(np.zeros(c_out), requires_grad=True)
    return w, b


def _classifier_dim(dims: ModelDims, variant: str) -> int:
    if variant in ("single-actf", "spatial-only"):
        return dims.out_channels
    return 2 * dims.out_channels


def _init_classifier(dims: ModelDims, seed: int, variant: str):
    # Seeded by the classifier input width so variants with the same head
    # shape share an identical head initialization.
    c_in = _classifier_dim(dims, variant)
    rng = np.random.default_rng([seed, c_in])
    bound = np.sqrt(3.0 / c_in)
    w = Tensor(rng.uniform(-bound, bound, size=(c_in, dims.n_classes)), requires_grad=True)
    b = Tensor(np.zeros(dims.n_classes), requires_grad=True)
    return w, b


def init_params(dims: ModelDims, seed: int, variant: str = "full") -> ModelParams:
    """Initialize all weights deterministically from ``seed``."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    rng = np.random.default_rng(seed)
    w1, b1 = _conv_layer(dims.in_channels, dims.conv1_channels, 3, rng)
    w2, b2 = _conv_layer(dims.conv1_channels, dims.out_channels, 3, rng)
    attn = init_temporal_attention(dims.sketch_dim, rng)
    reduction = init_reduction(dims.concat_channels, dims.r1, dims.r2, dims.out_channels, rng)
    actf = ActfParams(
        plan=make_plan(dims.out_channels, dims.sketch_dim, seed),
        attn=attn,
        pair_fusion=init_pair_fusion("pair-fusion"),
        reduction=reduction,
    )
    clf_w, clf_b = _init_classifier(dims, seed, variant)
    return ModelParams(
        dims=dims,
        seed=int(seed),
        variant=variant,
        backbone=Backbone(w1, b1, w2, b2),
        actf=actf,
        final_fusion=init_pair_fusion("final-fusion"),
        clf_w=clf_w,
        clf_b=clf_b,
    )


def make_ablation(variant: str, params: ModelParams) -> ModelParams:
    """A variant model sharing every stage of ``params`` except, when the
    classifier input width changes, a freshly initialized head."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if _classifier_dim(params.dims, variant) == _classifier_dim(params.dims, params.variant):
        clf_w, clf_b = params.clf_w, params.clf_b
    else:
        clf_w, clf_b = _init_classifier(params.dims, params.seed, variant)
    return replace(params, variant=variant, clf_w=clf_w, clf_b=clf_b)


def stpool(F: LowLevelFeature) -> Tensor:
    """Global mean over time and space per channel (the spatial branch)."""
    t = F.frames
    h, w = F.spatial
    pooled = T.avg_pool(F.tensor, (t, h, w), (1, 1, 1))
    return T.reshape(pooled, (F.channels,))


def _classify(v: Tensor, params: ModelParams) -> Tensor:
    x = T.matmul(T.reshape(v, (1, v.data.shape[0])), params.clf_w)
    x = T.add(T.reshape(x, (params.dims.n_classes,)), params.clf_b)
    return x


def forward(video: Tensor, params: ModelParams) -> Tensor:
    """Run one video (t, 3, H, W) through the variant's pipeline to logits."""
    d = params.dims
    if video.data.ndim != 4 or video.data.shape[1] != d.in_channels:
        raise InputError(f"forward: expected (t, {d.in_channels}, H, W), got {video.data.shape}")
    if video.data.shape[0] < 2:
        raise InputError("forward: need at least 2 frames")
    if video.data.shape[2:] != (d.height, d.width):
        raise InputError(
            f"forward: spatial size {video.data.shape[2:]} != configured ({d.height}, {d.width})"
        )
    F = params.backbone.apply(video)
    variant = params.variant
    if variant == "spatial-only":
        return _classify(stpool(F), params)
    if variant == "single-actf":
        return _classify(extract_actf(F, params.actf), params)
    v_st = stpool(F)
    if variant == "full":
        v_actf = extract_actf(F, params.actf)
        v = fuse_pair(v_actf, v_st, params.final_fusion)
    elif variant == "iccf-only":
        v_actf = extract_actf(F, params.actf, imf_weight_zero=True)
        v = fuse_pair(v_actf, v_st, params.final_fusion)
    elif variant == "no-attn":
        v_actf = extract_actf(F, params.actf, attend=False)
        v = T.concat_channels(v_actf, v_st)
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    return _classify(v, params)


def loss(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy against a class index."""
    return T.cross_entropy(logits, label)


# ---------------------------------------------------------------------------
# parameter registry


def named_tensors(params: ModelParams):
    """Every tensor of the model in a fixed serialization order."""
    r = params.actf.reduction
    return [
        ("backbone.w1", params.backbone.w1),
        ("backbone.b1", params.backbone.b1),
        ("backbone.w2", params.backbone.w2),
        ("backbone.b2", params.backbone.b2),
        ("attn.proj", params.actf.attn.proj),
        ("pair_fusion.raw_a", params.actf.pair_fusion.raw_a),
        ("pair_fusion.raw_b", params.actf.pair_fusion.raw_b),
        ("reduction.w1", r.w1),
        ("reduction.b1", r.b1),
        ("reduction.w2", r.w2),
        ("reduction.b2", r.b2),
        ("reduction.w3", r.w3),
        ("reduction.b3", r.b3),
        ("final_fusion.raw_a", params.final_fusion.raw_a),
        ("final_fusion.raw_b", params.final_fusion.raw_b),
        ("clf.w", params.clf_w),
        ("clf.b", params.clf_b),
    ]


def trainable_parameters(params: ModelParams):
    """(name, tensor, weight_decay?) triples reached by the variant's forward.

    Weight decay applies to weight matrices only; biases and the raw fusion
    scalars are exempt (decaying fusion logits toward the neutral split would
    be a modeling choice, not regularization).
    """
    variant = params.variant
    out = [
        ("backbone.w1", params.backbone.w1, True),
        ("backbone.b1", params.backbone.b1, False),
        ("backbone.w2", params.backbone.w2, True),
        ("backbone.b2", params.backbone.b2, False),
    ]
    if variant != "spatial-only":
        r = params.actf.reduction
        if variant != "no-attn":
            out.append(("attn.proj", params.actf.attn.proj, True))
        if variant in ("full", "single-actf"):
            out.append(("pair_fusion.raw_a", params.actf.pair_fusion.raw_a, False))
            out.append(("pair_fusion.raw_b", params.actf.pair_fusion.raw_b, False))
        out += [
            ("reduction.w1", r.w1, True),
            ("reduction.b1", r.b1, False),
            ("reduction.w2", r.w2, True),
            ("reduction.b2", r.b2, False),
            ("reduction.w3", r.w3, True),
            ("reduction.b3", r.b3, False),
        ]
        if variant in ("full", "iccf-only"):
            out.append(("final_fusion.raw_a", params.final_fusion.raw_a, False))
            out.append(("final_fusion.raw_b", params.final_fusion.raw_b, False))
    out.append(("clf.w", params.clf_w, True))
    out.append(("clf.b", params.clf_b, False))
    return out


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"ACKP"
_CKPT_VERSION = 1


def save_checkpoint(path, params: ModelParams) -> None:
    """Versioned binary container: JSON metadata + tensors in the file format
    of :mod:`actf.data` (32-bit payloads). Sketch tables are regenerated from
    the recorded seed, not stored."""
    from .data import tensor_to_bytes
    from ._io import atomic_write_bytes

    d = params.dims
    meta = {
        "dims": {
            "frames": d.frames, "height": d.height, "width": d.width,
            "conv1_channels": d.conv1_channels, "out_channels": d.out_channels,
            "sketch_dim": d.sketch_dim, "n_classes": d.n_classes,
            "in_channels": d.in_channels, "reduce1": d.reduce1, "reduce2": d.reduce2,
        },
        "seed": params.seed,
        "variant": params.variant,
        "plan": {
            "seed": params.actf.plan.seed,
            "input_dim": params.actf.plan.input_dim,
            "output_dim": params.actf.plan.output_dim,
        },
        "tensors": [name for name, _ in named_tensors(params)],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [_CKPT_MAGIC,
             np.uint16(_CKPT_VERSION).tobytes(),
             np.uint32(len(blob)).tobytes(),
             blob]
    for _, t in named_tensors(params):
        parts.append(tensor_to_bytes(t))
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path) -> ModelParams:
    from .data import tensor_from_bytes

    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"at byte 0: bad checkpoint magic {raw[:4]!r}")
    version = int(np.frombuffer(raw[4:6], dtype="<u2")[0])
    if version != _CKPT_VERSION:
        raise FormatError(f"at byte 4: unsupported checkpoint version {version}")
    meta_len = int(np.frombuffer(raw[6:10], dtype="<u4")[0])
    meta = json.loads(raw[10:10 + meta_len].decode())
    dims = ModelDims(**meta["dims"])
    params = init_params(dims, meta["seed"], meta["variant"])
    plan = params.actf.plan
    pm = meta["plan"]
    if (pm["seed"], pm["input_dim"], pm["output_dim"]) != (
            plan.seed, plan.input_dim, plan.output_dim):
        raise ConfigError("checkpoint plan record conflicts with model dims")
    offset = 10 + meta_len
    by_name = dict(named_tensors(params))
    for name in meta["tensors"]:
        if name not in by_name:
            raise ConfigError(f"checkpoint names unknown tensor {name!r}")
        t, offset = tensor_from_bytes(raw, offset)
        target = by_name[name]
        if t.data.size != target.data.size:
            raise ShapeError(
                f"checkpoint tensor {name!r} has {t.data.size} values, "
                f"expected {target.data.size}"
            )
        target.data = t.data.reshape(target.data.shape)
    return params
