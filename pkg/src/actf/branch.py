"""The temporal-feature branch: bilinear inter-frame correlation with temporal
attention, pairwise mean features, attentive fusion, and the reduction to a
C_out-length video vector.

Shapes, with F of shape (t, C_out, H, W) and sketch dimension d:
    bilinear correlation B : (t-1, d, H, W)
    pairwise mean        L : (t-1, C_out, H, W)
    fused                H : (t-1, d + C_out, H, W)
    output          v_actf : (C_out,)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ShapeError
from . import tensor as T
from .tensor import Tensor
from .sketch import SketchPlan, compact_bilinear
from .attention import (
    PairFusionWeights,
    TemporalAttention,
    fuse_pair,
    temporal_weights,
)


@dataclass
class LowLevelFeature:
    """Backbone output with axes (time, channels, height, width); t >= 2."""

    tensor: Tensor

    def __post_init__(self):
        if self.tensor.data.ndim != 4:
            raise ShapeError(f"LowLevelFeature must be rank 4, got {self.tensor.data.shape}")
        if self.tensor.data.shape[0] < 2:
            raise InputError("LowLevelFeature needs at least 2 frames (one frame pair)")

    @property
    def frames(self) -> int:
        return self.tensor.data.shape[0]

    @property
    def channels(self) -> int:
        return self.tensor.data.shape[1]

    @property
    def spatial(self) -> tuple:
        return self.tensor.data.shape[2:4]


@dataclass
class IccfFeature:
    """Attention-weighted bilinear correlation: b[i] already scaled by alpha[i]."""

    b: Tensor
    alpha: Tensor


@dataclass
class ImfFeature:
    """Pairwise temporal mean of consecutive frames."""

    l: Tensor


@dataclass
class ReductionNetwork:
    """Three linear layers (ReLU after the first two) mapping the pooled
    fused feature down to a C_out-length vector."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    def apply(self, v: Tensor) -> Tensor:
        x = T.reshape(v, (1, v.data.shape[0]))
        x = T.relu(T.add(T.matmul(x, self.w1), self.b1))
        x = T.relu(T.add(T.matmul(x, self.w2), self.b2))
        x = T.add(T.matmul(x, self.w3), self.b3)
        return T.reshape(x, (x.data.shape[1],))


def init_reduction(in_dim: int, r1: int, r2: int, out_dim: int,
                   rng: np.random.Generator) -> ReductionNetwork:
    def layer(fan_in, fan_out):
        bound = np.sqrt(3.0 / fan_in)
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
        b = Tensor(np.zeros((1, fan_out)), requires_grad=True)
        return w, b

    w1, b1 = layer(in_dim, r1)
    w2, b2 = layer(r1, r2)
    w3, b3 = layer(r2, out_dim)
    return ReductionNetwork(w1, b1, w2, b2, w3, b3)


@dataclass
class ActfParams:
    """Everything learnable (plus the frozen sketch plan) in the temporal branch."""

    plan: SketchPlan
    attn: TemporalAttention
    pair_fusion: PairFusionWeights
    reduction: ReductionNetwork
    # Ablation switch: sketch only the leading frame of each pair instead of
    # the cross-frame pair (the literal single-frame reading).
    single_frame_sketch: bool = False


def extract_iccf(F: LowLevelFeature, plan: SketchPlan, attn: TemporalAttention,
                 attend: bool = True, single_frame: bool = False) -> IccfFeature:
    """Per-pair compact bilinear correlation, weighted by temporal attention.

    With ``attend`` off every pair gets weight 1 (direct concatenation, no
    normalization) and alpha is a constant vector of ones.
    """
    if plan.input_dim != F.channels:
        raise ConfigError(
            f"extract_iccf: plan input_dim {plan.input_dim} != feature channels {F.channels}"
        )
    t = F.frames
    h, w = F.spatial
    d = plan.output_dim
    # All t-1 pairs go through the sketch in one ((t-1)*H*W, C) batch.
    fi = _locations_by_channels(T.frame_slice(F.tensor, 0, t - 1))
    fj = fi if single_frame else _locations_by_channels(T.frame_slice(F.tensor, 1, t))
    cb = compact_bilinear(fi, fj, plan)                         # ((t-1)*H*W, d)
    b = T.transpose(T.reshape(cb, (t - 1, h, w, d)), (0, 3, 1, 2))
    if attend:
        alpha = temporal_weights([T.frame(b, i) for i in range(t - 1)], attn)
        return IccfFeature(b=T.scale_frames(b, alpha), alpha=alpha)
    return IccfFeature(b=b, alpha=Tensor(np.ones(t - 1)))


def _locations_by_channels(f: Tensor) -> Tensor:
    """(..., C, H, W) feature frames -> (N*H*W, C) batch of per-location vectors."""
    if f.data.ndim == 3:
        c, h, w = f.data.shape
        return T.reshape(T.transpose(f, (1, 2, 0)), (h * w, c))
    n, c, h, w = f.data.shape
    return T.reshape(T.transpose(f, (0, 2, 3, 1)), (n * h * w, c))


def extract_imf(F: LowLevelFeature) -> ImfFeature:
    """Temporal average of each consecutive frame pair (kernel 2 along time)."""
    return ImfFeature(l=T.avg_pool(F.tensor, (2, 1, 1), (1, 1, 1)))


def extract_actf(F: LowLevelFeature, params: ActfParams,
                 attend: bool = True, imf_weight_zero: bool = False) -> Tensor:
    """Full temporal branch: correlation + mean features, fused, pooled, reduced.

    ``imf_weight_zero`` forces the mean-feature fusion weight to 0 (correlation
    only); ``attend`` off replaces every attentive concatenation with direct
    concatenation at weight 1.
    """
    iccf = extract_iccf(F, params.plan, params.attn, attend=attend,
                        single_frame=params.single_frame_sketch)
    imf = extract_imf(F)
    if imf_weight_zero:
        h_cat = T.concat_channels(iccf.b, T.scale(imf.l, 0.0))
    elif attend:
        h_cat = fuse_pair(iccf.b, imf.l, params.pair_fusion)
    else:
        h_cat = T.concat_channels(iccf.b, imf.l)
    p, c_concat, h, w = h_cat.data.shape
    pooled = T.avg_pool(h_cat, (p, h, w), (1, 1, 1))
    pooled = T.reshape(pooled, (c_concat,))
    return params.reduction.apply(pooled)
