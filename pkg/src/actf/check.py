"""Finite-difference gradient auditing.

Compares tape gradients against central finite differences (default step
1e-5, in f64) using a norm-based relative error over all checked leaves.
``run_audit`` covers every differentiable primitive plus the end-to-end model
at tiny dimensions; the CLI ``gradcheck`` command is a thin wrapper over it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor as T
from .tensor import Tape, Tensor
from .sketch import compact_bilinear, count_sketch, exact_bilinear, make_plan
from .attention import (
    TemporalAttention,
    PairFusionWeights,
    fuse_pair,
    temporal_weights,
)

PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.err < self.tol


def gradient_error(make_loss, leaves, step: float = 1e-5) -> float:
    """Norm-based relative error between tape and finite-difference gradients.

    ``make_loss`` must rebuild the scalar loss from the leaves' current data
    each call; it is invoked once under a tape and 2N more times for the
    central differences.
    """
    for leaf in leaves:
        leaf.grad = None
    with Tape() as tape:
        loss = make_loss()
        tape.backward(loss)
    analytic = np.concatenate([
        (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)).ravel()
        for leaf in leaves
    ])
    numeric = []
    for leaf in leaves:
        # Perturb by assignment, never through a view: 0-d data would
        # silently decay to a numpy scalar and break in-place writes.
        base = np.array(leaf.data, copy=True)
        shape = base.shape
        flat = base.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            leaf.data = flat.reshape(shape).copy()
            f_plus = float(make_loss().data)
            flat[i] = orig - step
            leaf.data = flat.reshape(shape).copy()
            f_minus = float(make_loss().data)
            flat[i] = orig
            g[i] = (f_plus - f_minus) / (2 * step)
        leaf.data = base
        numeric.append(g)
    numeric = np.concatenate(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def _scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    """Project an op output to a scalar with fixed weights (keeps the check
    sensitive to every output coordinate)."""
    n = out.data.size
    flat = T.reshape(out, (1, n))
    return T.reshape(T.matmul(flat, Tensor(weights.reshape(n, 1))), ())


def _param(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def run_audit(seed: int = 0) -> list:
    """Gradient checks for every primitive and the end-to-end model."""
    rng = np.random.default_rng(seed)
    results = []

    def check(name, make_loss, leaves, tol=PRIMITIVE_TOL):
        results.append(CheckResult(name, gradient_error(make_loss, leaves), tol))

    a = _param(rng, (3, 4))
    b = _param(rng, (4, 2))
    w = rng.standard_normal(6)
    check("matmul", lambda: _scalarize(T.matmul(a, b), w), [a, b])

    x = _param(rng, (5, 5))
    y = _param(rng, (5, 5))
    w = rng.standard_normal(25)
    check("add", lambda: _scalarize(T.add(x, y), w), [x, y])
    check("sub", lambda: _scalarize(T.sub(x, y), w), [x, y])
    check("mul", lambda: _scalarize(T.mul(x, y), w), [x, y])

    s = Tensor(np.asarray(0.7), requires_grad=True)
    check("scale", lambda: _scalarize(T.scale(x, s), w), [x, s])
    check("sigmoid", lambda: _scalarize(T.sigmoid(x), w), [x])
    # Keep relu inputs away from the kink at 0.
    xr = Tensor(np.where(np.abs(x.data) < 0.1, 0.5, x.data), requires_grad=True)
    check("relu", lambda: _scalarize(T.relu(xr), w), [xr])

    v = _param(rng, (6,))
    wv = rng.standard_normal(6)
    check("softmax", lambda: _scalarize(T.softmax(v), wv), [v])

    c1 = _param(rng, (16,))
    c2 = _param(rng, (16,))
    w = rng.standard_normal(16)
    check("circular_convolve", lambda: _scalarize(T.circular_convolve(c1, c2), w), [c1, c2])

    p4 = _param(rng, (3, 2, 4, 4))
    q4 = _param(rng, (3, 5, 4, 4))
    w = rng.standard_normal(3 * 7 * 4 * 4)
    check("concat_channels", lambda: _scalarize(T.concat_channels(p4, q4), w), [p4, q4])

    w = rng.standard_normal(2 * 2 * 3 * 3)
    check("avg_pool",
          lambda: _scalarize(T.avg_pool(p4, (2, 2, 2), (1, 1, 1)), w), [p4])

    xc = _param(rng, (2, 3, 5, 5))
    wc = _param(rng, (4, 3, 3, 3))
    bc = _param(rng, (4,))
    w = rng.standard_normal(2 * 4 * 5 * 5)
    check("conv2d", lambda: _scalarize(T.conv2d(xc, wc, bc), w), [xc, wc, bc])

    logits = _param(rng, (5,))
    check("cross_entropy", lambda: T.cross_entropy(logits, 2), [logits])

    plan = make_plan(12, 16, seed=seed + 1)
    sx = _param(rng, (12,))
    sy = _param(rng, (12,))
    w = rng.standard_normal(16)
    check("count_sketch", lambda: _scalarize(count_sketch(sx, 1, plan), w), [sx])
    check("compact_bilinear",
          lambda: _scalarize(compact_bilinear(sx, sy, plan), w), [sx, sy])
    w = rng.standard_normal(144)
    check("exact_bilinear", lambda: _scalarize(exact_bilinear(sx, sy), w), [sx, sy])

    attn = TemporalAttention(proj=_param(rng, (6, 1)), feat_dim=6)
    pairs = [_param(rng, (6, 2, 2)) for _ in range(3)]
    w = rng.standard_normal(3)
    check("temporal_weights",
          lambda: _scalarize(temporal_weights(pairs, attn), w),
          pairs + [attn.proj])

    fw = PairFusionWeights(raw_a=_param(rng, ()), raw_b=_param(rng, ()))
    fa = _param(rng, (8,))
    fb = _param(rng, (8,))
    w = rng.standard_normal(16)
    check("fuse_pair",
          lambda: _scalarize(fuse_pair(fa, fb, fw), w),
          [fa, fb, fw.raw_a, fw.raw_b])

    results.append(model_audit(seed))
    return results


def model_audit(seed: int = 0,
                dims: M.ModelDims | None = None) -> CheckResult:
    """End-to-end check through forward + loss over all trainable parameters."""
    if dims is None:
        dims = M.ModelDims(frames=4, height=16, width=16, conv1_channels=3,
                           out_channels=8, sketch_dim=32, n_classes=3)
    rng = np.random.default_rng(seed)
    params = M.init_params(dims, seed, "full")
    # Move fusion scalars off the symmetric zero init so their gradients are
    # generic, and perturb biases off zero.
    for name, t, _ in M.trainable_parameters(params):
        if t.data.size <= 4:
            t.data = np.asarray(t.data + 0.1 * rng.standard_normal(t.data.shape))
    video = Tensor(rng.uniform(0, 1, size=(dims.frames, 3, dims.height, dims.width)))
    label = 1
    leaves = [t for _, t, _ in M.trainable_parameters(params)]
    err = gradient_error(lambda: M.loss(M.forward(video, params), label), leaves)
    return CheckResult("model_end_to_end", err, MODEL_TOL)
