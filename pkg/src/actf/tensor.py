"""Dense float64 tensors with a minimal tape-based reverse-mode autodiff.

Tensors wrap row-major numpy arrays. Every differentiable primitive in this
module computes its forward value eagerly and, when a Tape is active and some
input requires gradients, records a backward closure. ``Tape.backward`` replays
the closures in exact reverse order of recording, accumulating cotangents into
``Tensor.grad``.

Broadcasting is deliberately not supported except scalar*tensor (``scale``);
mismatched shapes raise ShapeError.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_ACTIVE_TAPE = None


class Tensor:
    """A dense f64 array with an optional accumulated-gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive operations for one reverse sweep.

    Use as a context manager around the forward pass, then call ``backward``
    on the scalar result. Tapes do not nest.
    """

    def __init__(self):
        self._records = []  # (inputs, output, backward_fn)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        for inputs, out, fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g


def apply_primitive(data, inputs, backward) -> Tensor:
    """Create an op output, recording ``backward`` on the active tape.

    ``backward(out_grad)`` must return one gradient array (or None) per input,
    aligned with ``inputs``. Exposed so other modules (e.g. the sketch map)
    can define primitives with custom backward rules.
    """
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE._records.append((tuple(inputs), out, backward))
    return out


def _require_same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return apply_primitive(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return apply_primitive(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return apply_primitive(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, s) -> Tensor:
    """Multiply a tensor by a scalar; ``s`` may be a float or a scalar Tensor."""
    if isinstance(s, Tensor):
        if s.data.shape != ():
            raise ShapeError(f"scale: scalar operand has shape {s.data.shape}")
        xd, sd = x.data, float(s.data)

        def backward(g):
            return g * sd, np.asarray(np.sum(g * xd))

        return apply_primitive(xd * sd, (x, s), backward)
    sv = float(s)
    return apply_primitive(x.data * sv, (x,), lambda g: (g * sv,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_primitive(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # Stable in both tails: exp only ever sees non-positive arguments.
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    y[~pos] = e / (1.0 + e)
    return apply_primitive(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor) -> Tensor:
    """Max-shifted softmax over a rank-1 tensor."""
    if x.data.ndim != 1 or x.data.size < 1:
        raise ShapeError(f"softmax: expected a non-empty vector, got shape {x.data.shape}")
    z = np.exp(x.data - np.max(x.data))
    y = z / np.sum(z)
    return apply_primitive(y, (x,), lambda g: (y * (g - np.dot(g, y)),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return apply_primitive(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def circular_convolve(a: Tensor, b: Tensor) -> Tensor:
    """Circular convolution along the last axis: out[k] = sum_j a[j] b[(k-j) mod d].

    Computed via real FFTs, so the result carries no imaginary residue.
    Backward is circular correlation. Leading (batch) axes must match.
    """
    _require_same_shape(a, b, "circular_convolve")
    d = a.data.shape[-1]
    if d < 1:
        raise ShapeError("circular_convolve: empty last axis")
    fa = np.fft.rfft(a.data, axis=-1)
    fb = np.fft.rfft(b.data, axis=-1)
    out = np.fft.irfft(fa * fb, n=d, axis=-1)

    def backward(g):
        fg = np.fft.rfft(g, axis=-1)
        ga = np.fft.irfft(fg * np.conj(fb), n=d, axis=-1)
        gb = np.fft.irfft(fg * np.conj(fa), n=d, axis=-1)
        return ga, gb

    return apply_primitive(out, (a, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    xshape = x.data.shape
    return apply_primitive(x.data.reshape(shape), (x,), lambda g: (g.reshape(xshape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply_primitive(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def stack(tensors) -> Tensor:
    """Stack equal-shaped tensors along a new leading axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack: empty tensor list")
    for t in tensors[1:]:
        _require_same_shape(tensors[0], t, "stack")
    data = np.stack([t.data for t in tensors])
    return apply_primitive(data, tensors, lambda g: tuple(g[i] for i in range(len(tensors))))


def frame(x: Tensor, i: int) -> Tensor:
    """Select index ``i`` along the leading axis."""
    if not 0 <= i < x.data.shape[0]:
        raise ShapeError(f"frame: index {i} out of range for axis 0 of {x.data.shape}")
    xshape = x.data.shape

    def backward(g):
        gx = np.zeros(xshape)
        gx[i] = g
        return (gx,)

    return apply_primitive(x.data[i], (x,), backward)


def frame_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice [start:stop) along the leading axis."""
    n = x.data.shape[0]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"frame_slice: [{start}:{stop}) invalid for axis 0 of {x.data.shape}")
    xshape = x.data.shape

    def backward(g):
        gx = np.zeros(xshape)
        gx[start:stop] = g
        return (gx,)

    return apply_primitive(x.data[start:stop], (x,), backward)


def take(x: Tensor, i: int) -> Tensor:
    """Select element ``i`` of a vector as a scalar tensor."""
    if x.data.ndim != 1 or not 0 <= i < x.data.shape[0]:
        raise ShapeError(f"take: index {i} invalid for shape {x.data.shape}")
    n = x.data.shape[0]

    def backward(g):
        gx = np.zeros(n)
        gx[i] = g
        return (gx,)

    return apply_primitive(x.data[i], (x,), backward)


def scale_frames(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each leading-axis slice of ``x`` by the matching entry of vector ``s``."""
    if s.data.ndim != 1 or s.data.shape[0] != x.data.shape[0]:
        raise ShapeError(
            f"scale_frames: weight shape {s.data.shape} does not match leading axis of {x.data.shape}"
        )
    xd, sd = x.data, s.data
    expand = (slice(None),) + (None,) * (xd.ndim - 1)

    def backward(g):
        axes = tuple(range(1, xd.ndim))
        return (g * sd[expand], (g * xd).sum(axis=axes))

    return apply_primitive(xd * sd[expand], (x, s), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis (axis 1 of rank-4, axis 0 of rank-1)."""
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat_channels: rank mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.ndim == 1:
        axis = 0
    elif a.data.ndim == 4:
        axis = 1
        if a.data.shape[:1] + a.data.shape[2:] != b.data.shape[:1] + b.data.shape[2:]:
            raise ShapeError(
                f"concat_channels: non-channel extents differ: {a.data.shape} vs {b.data.shape}"
            )
    else:
        raise ShapeError(f"concat_channels: rank {a.data.ndim} unsupported")
    ca = a.data.shape[axis]

    def backward(g):
        return np.take(g, range(ca), axis=axis), np.take(g, range(ca, g.shape[axis]), axis=axis)

    return apply_primitive(np.concatenate([a.data, b.data], axis=axis), (a, b), backward)


# ---------------------------------------------------------------------------
# pooling and convolution


def avg_pool(x: Tensor, kernel, stride) -> Tensor:
    """Sliding-window mean over the (time, height, width) axes of a rank-4 tensor.

    The channel axis (axis 1) is never pooled. Output extent per pooled axis is
    floor((extent - k) / s) + 1.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool: expected rank-4 input, got shape {x.data.shape}")
    kt, kh, kw = kernel
    st, sh, sw = stride
    T, C, H, W = x.data.shape
    if kt < 1 or kh < 1 or kw < 1 or st < 1 or sh < 1 or sw < 1:
        raise ShapeError(f"avg_pool: kernel {kernel} and stride {stride} must be >= 1")
    if kt > T or kh > H or kw > W:
        raise ShapeError(f"avg_pool: kernel {kernel} exceeds input extents {x.data.shape}")
    # The window mean factorizes per axis, so pool one axis at a time with
    # strided slice sums instead of materializing a 7-D window view.
    def pool_axis(a, axis, k, s):
        if k == 1 and s == 1:
            return a
        n = a.shape[axis]
        if k == n:
            return a.mean(axis=axis, keepdims=True)
        n_out = (n - k) // s + 1
        sel = lambda sl: tuple(sl if i == axis else slice(None) for i in range(a.ndim))
        out = a[sel(slice(0, s * n_out, s))].copy()
        for off in range(1, k):
            out += a[sel(slice(off, off + s * n_out, s))]
        return out / k

    out = pool_axis(pool_axis(pool_axis(x.data, 0, kt, st), 2, kh, sh), 3, kw, sw)
    To, _, Ho, Wo = out.shape
    k = kt * kh * kw
    xshape = x.data.shape

    def backward(g):
        gk = g / k
        if (To, Ho, Wo) == (1, 1, 1) and (kt, kh, kw) == (T, H, W):
            # Global pool: the cotangent spreads uniformly.
            return (np.broadcast_to(gk.reshape(1, C, 1, 1), xshape).copy(),)
        gx = np.zeros(xshape)
        for a in range(kt):
            for b in range(kh):
                for c in range(kw):
                    gx[a:a + st * To:st, :, b:b + sh * Ho:sh, c:c + sw * Wo:sw] += gk
        return (gx,)

    return apply_primitive(np.ascontiguousarray(out), (x,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Batched 2-D convolution with 'same' zero padding and stride 1.

    x: (N, C_in, H, W); w: (C_out, C_in, kh, kw) with odd kh, kw; b: (C_out,).
    Only what the tiny per-frame backbone needs.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeError(
            f"conv2d: bad ranks x={x.data.shape} w={w.data.shape} b={b.data.shape}"
        )
    N, Cin, H, W = x.data.shape
    Cout, Cin_w, kh, kw = w.data.shape
    if Cin != Cin_w or b.data.shape[0] != Cout or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(
            f"conv2d: incompatible shapes x={x.data.shape} w={w.data.shape} b={b.data.shape}"
        )
    ph, pw = kh // 2, kw // 2
    xpad = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xpad, (kh, kw), axis=(2, 3))
    out = np.einsum("nchwij,ocij->nohw", windows, w.data, optimize=True)
    out += b.data[None, :, None, None]
    wd = w.data

    def backward(g):
        gw = np.einsum("nohw,nchwij->ocij", g, windows, optimize=True)
        gb = g.sum(axis=(0, 2, 3))
        gxpad = np.zeros_like(xpad)
        for i in range(kh):
            for j in range(kw):
                gxpad[:, :, i:i + H, j:j + W] += np.einsum(
                    "nohw,oc->nchw", g, wd[:, :, i, j], optimize=True
                )
        return gxpad[:, :, ph:ph + H, pw:pw + W], gw, gb

    return apply_primitive(out, (x, w, b), backward)


# ---------------------------------------------------------------------------
# classification loss


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy of a logit vector against a class index."""
    from .errors import InputError

    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy: expected a logit vector, got {logits.data.shape}")
    n = logits.data.shape[0]
    if not 0 <= label < n:
        raise InputError(f"cross_entropy: label {label} out of range for {n} classes")
    m = np.max(logits.data)
    z = np.exp(logits.data - m)
    p = z / np.sum(z)
    loss = m + np.log(np.sum(z)) - logits.data[label]

    def backward(g):
        gl = p.copy()
        gl[label] -= 1.0
        return (gl * g,)

    return apply_primitive(np.asarray(loss), (logits,), backward)
