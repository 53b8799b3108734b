"""Compact bilinear map: count sketches combined by circular convolution.

Approximates the flattened outer product of two feature vectors in a low
dimension d, preserving inner products in expectation:
    E[<compact_bilinear(x, y), compact_bilinear(u, v)>] = <x, u> <y, v>
The hash/sign tables are frozen at plan creation and never trained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, apply_primitive, circular_convolve


@dataclass(frozen=True)
class SketchPlan:
    """Frozen random tables defining the sketch map and its output dimension.

    h1/h2 map input coordinates to buckets in [0, output_dim); s1/s2 are
    +-1 signs. Both pairs are drawn independently and are fully reproducible
    from ``seed``. ``proj1``/``proj2`` are the equivalent dense (C, d)
    scatter matrices, cached for fast batched application.
    """

    input_dim: int
    output_dim: int
    seed: int
    h1: np.ndarray
    h2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    proj1: np.ndarray = field(repr=False)
    proj2: np.ndarray = field(repr=False)


def make_plan(input_dim: int, output_dim: int, seed: int) -> SketchPlan:
    """Draw hash and sign tables deterministically from ``seed``."""
    if input_dim < 1 or output_dim < 1:
        raise ConfigError(f"make_plan: dims must be >= 1, got ({input_dim}, {output_dim})")
    rng = np.random.default_rng(seed)
    h1 = rng.integers(0, output_dim, size=input_dim, dtype=np.int32)
    h2 = rng.integers(0, output_dim, size=input_dim, dtype=np.int32)
    s1 = (rng.integers(0, 2, size=input_dim) * 2 - 1).astype(np.float64)
    s2 = (rng.integers(0, 2, size=input_dim) * 2 - 1).astype(np.float64)

    def dense(h, s):
        m = np.zeros((input_dim, output_dim))
        m[np.arange(input_dim), h] = s
        return m

    return SketchPlan(input_dim, output_dim, int(seed), h1, h2, s1, s2,
                      dense(h1, s1), dense(h2, s2))


def _proj(plan: SketchPlan, which: int) -> np.ndarray:
    if which == 1:
        return plan.proj1
    if which == 2:
        return plan.proj2
    raise ConfigError(f"count_sketch: table selector must be 1 or 2, got {which}")


def count_sketch(x: Tensor, which: int, plan: SketchPlan) -> Tensor:
    """Signed-hash projection: out[h(j)] += s(j) * x[j] along the last axis.

    Accepts a vector of length input_dim or a batch (..., input_dim); the
    sketch is applied independently to each row. Linear, so backward scatters
    the cotangent back through the same tables.
    """
    if x.data.shape[-1] != plan.input_dim:
        raise ShapeError(
            f"count_sketch: last axis {x.data.shape[-1]} != plan input_dim {plan.input_dim}"
        )
    m = _proj(plan, which)
    return apply_primitive(x.data @ m, (x,), lambda g: (g @ m.T,))


def compact_bilinear(x: Tensor, y: Tensor, plan: SketchPlan) -> Tensor:
    """Sketch of the outer product x y^T: CS1(x) circularly convolved with CS2(y).

    Batched like count_sketch; differentiable in both arguments.
    """
    if x.data.shape != y.data.shape:
        raise ShapeError(
            f"compact_bilinear: shape mismatch {x.data.shape} vs {y.data.shape}"
        )
    return circular_convolve(count_sketch(x, 1, plan), count_sketch(y, 2, plan))


def exact_bilinear(x: Tensor, y: Tensor) -> Tensor:
    """Flattened outer product x y^T; the brute-force oracle for the compact form."""
    if x.data.ndim != 1 or x.data.shape != y.data.shape:
        raise ShapeError(
            f"exact_bilinear: expected equal-length vectors, got {x.data.shape} and {y.data.shape}"
        )
    n = x.data.shape[0]
    xd, yd = x.data, y.data

    def backward(g):
        gm = g.reshape(n, n)
        return gm @ yd, gm.T @ xd

    return apply_primitive(np.outer(xd, yd).reshape(-1), (x, y), backward)
