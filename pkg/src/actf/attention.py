"""Attentive concatenation weights: projection -> sigmoid -> softmax.

The same mechanism serves three sites: temporal weights over frame-pair
features, the pair-fusion scalars weighting the bilinear/mean features, and
the final-fusion scalars weighting the temporal/spatial video vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from . import tensor as T
from .tensor import Tensor


@dataclass
class TemporalAttention:
    """Shared projection producing one logit per frame-pair feature.

    ``proj`` has shape (feat_dim, 1) and is shared across all pairs.
    """

    proj: Tensor
    feat_dim: int


def init_temporal_attention(feat_dim: int, rng: np.random.Generator) -> TemporalAttention:
    bound = np.sqrt(3.0 / feat_dim)
    w = Tensor(rng.uniform(-bound, bound, size=(feat_dim, 1)), requires_grad=True)
    return TemporalAttention(proj=w, feat_dim=feat_dim)


def temporal_weights(pairs, attn: TemporalAttention) -> Tensor:
    """Attention weights over frame-pair features; non-negative, summing to 1.

    Each (C, H, W) pair feature is spatially average-pooled to a C-vector,
    projected to a scalar logit, squashed by sigmoid, then normalized by a
    softmax across pairs.
    """
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("temporal_weights: empty pair list")
    pooled = []
    for p in pairs:
        if p.data.ndim != 3:
            raise ShapeError(f"temporal_weights: pair feature has shape {p.data.shape}")
        c, h, w = p.data.shape
        if c != attn.feat_dim:
            raise ShapeError(
                f"temporal_weights: feature dim {c} != attention dim {attn.feat_dim}"
            )
        v = T.avg_pool(T.reshape(p, (1, c, h, w)), (1, h, w), (1, 1, 1))
        pooled.append(T.reshape(v, (c,)))
    mat = T.stack(pooled)                       # (t-1, C)
    logits = T.reshape(T.matmul(mat, attn.proj), (len(pairs),))
    return T.softmax(T.sigmoid(logits))


@dataclass
class PairFusionWeights:
    """Two trainable raw scalars normalized to a (0,1) pair summing to 1.

    Effective weights are softmax over (sigmoid(raw_a), sigmoid(raw_b)); the
    sigmoid bounds the softmax logit gap, so each weight lies in roughly
    (0.269, 0.731). ``site`` labels which fusion this instance serves.
    """

    raw_a: Tensor
    raw_b: Tensor
    site: str = "pair-fusion"


def init_pair_fusion(site: str = "pair-fusion") -> PairFusionWeights:
    # Zero raw scalars give the neutral 0.5/0.5 split.
    return PairFusionWeights(
        raw_a=Tensor(np.zeros(()), requires_grad=True),
        raw_b=Tensor(np.zeros(()), requires_grad=True),
        site=site,
    )


def effective_weights(w: PairFusionWeights):
    """The normalized (w_a, w_b) pair as scalar tensors."""
    logits = T.stack([T.sigmoid(w.raw_a), T.sigmoid(w.raw_b)])
    probs = T.softmax(logits)
    return T.take(probs, 0), T.take(probs, 1)


def fuse_pair(a: Tensor, b: Tensor, w: PairFusionWeights) -> Tensor:
    """Weighted channel concatenation: concat(w_a * a, w_b * b).

    Accepts rank-4 feature maps (channel-axis concat) or rank-1 vectors.
    """
    wa, wb = effective_weights(w)
    return T.concat_channels(T.scale(a, wa), T.scale(b, wb))
