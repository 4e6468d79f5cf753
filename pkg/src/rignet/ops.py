"""Differentiable primitives on NCHW tensors.

Every function is pure: inputs are never modified and the result is a new
:class:`~rignet.tensor.Tensor`.  When a :class:`~rignet.tensor.Tape` is
active the op appends a node whose backward closure maps the output
gradient to input gradients.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import expit

from .tensor import ShapeError, Tensor, active_tape

__all__ = [
    "conv2d",
    "pool2d",
    "bilinear_upsample",
    "interpolation_matrix",
    "activation",
    "sigmoid",
    "tanh",
    "relu",
    "elementwise",
    "mul",
    "add",
    "concat_channels",
    "slice_channels",
    "sum_all",
    "weighted_sum",
    "softmax_ce_loss",
    "IGNORE_LABEL",
]

IGNORE_LABEL = 255


def _require_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (n, c, h, w), got shape {x.shape}")


def _flags(*inputs: Tensor):
    """Return (tape, per-input tracked flags) or (None, None) when nothing is recorded."""
    tape = active_tape()
    if tape is None:
        return None, None
    flags = tuple(tape.is_tracked(t) for t in inputs)
    if not any(flags):
        return None, None
    return tape, flags


def _out_size(size: int, k: int, stride: int, pad: int, axis: str) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral or empty output along {axis}: ({size} + 2*{pad} - {k}) / {stride} + 1"
        )
    return span // stride + 1


# --------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation, im2col + one matmul."""
    _require_4d(x, "conv2d input")
    _require_4d(kernel, "conv2d kernel")
    if stride < 1 or pad < 0:
        raise ShapeError(f"stride must be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    if c != ci:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {co} output channels")
    ho = _out_size(h, kh, stride, pad, "height")
    wo = _out_size(w, kw, stride, pad, "width")

    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, ho, wo, c, kh, kw))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, :, i, j] = xp[
                :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
            ].transpose(0, 2, 3, 1)
    cols2 = cols.reshape(n * ho * wo, c * kh * kw)
    w2 = kernel.data.reshape(co, -1)
    out2 = cols2 @ w2.T
    out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))
    result = Tensor._wrap(out)

    tape, need = _flags(x, kernel, bias)
    if tape is None:
        return result

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gk = (g2.T @ cols2).reshape(kernel.shape) if need[1] else None
        gb = g2.sum(axis=0) if need[2] else None
        gx = None
        if need[0]:
            gcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : pad + h, pad : pad + w]
        return gx, gk, gb

    tape.record("conv2d", (x, kernel, bias), result, back)
    return result


# --------------------------------------------------------------------------
# pooling


def pool2d(x: Tensor, kind: str = "avg", k: int = 2, stride: Optional[int] = None) -> Tensor:
    """Windowed mean or max, no padding.

    Max backward routes the gradient to the first maximal element of each
    window in row-major order.
    """
    _require_4d(x, "pool2d input")
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pooling kind {kind!r}; expected 'avg' or 'max'")
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"pool2d window {k} larger than input {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1

    def window(arr, i, j):
        return arr[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]

    if kind == "avg":
        acc = np.zeros((n, c, ho, wo))
        for i in range(k):
            for j in range(k):
                acc += window(x.data, i, j)
        out = acc / (k * k)
        arg = None
    else:
        stack = np.stack([window(x.data, i, j) for i in range(k) for j in range(k)])
        arg = np.argmax(stack, axis=0)
        out = np.take_along_axis(stack, arg[None], axis=0)[0]
    result = Tensor._wrap(out)

    tape, _ = _flags(x)
    if tape is None:
        return result

    def back(g):
        gx = np.zeros_like(x.data)
        for i in range(k):
            for j in range(k):
                if kind == "avg":
                    window(gx, i, j)[...] += g / (k * k)
                else:
                    window(gx, i, j)[...] += np.where(arg == i * k + j, g, 0.0)
        return (gx,)

    tape.record(f"pool2d_{kind}", (x,), result, back)
    return result


# --------------------------------------------------------------------------
# bilinear interpolation


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights of shape (n_out, n_in)."""
    if n_in < 1 or n_out < 1:
        raise ShapeError(f"interpolation sizes must be >= 1, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    for d in range(n_out):
        src = d * (n_in - 1) / (n_out - 1) if n_out > 1 else 0.0
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[d, i0] += 1.0 - frac
        m[d, i1] += frac
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize to ``(out_h, out_w)`` with corner-aligned bilinear sampling.

    Works in both directions; shrinking uses the same sampling rule.
    """
    _require_4d(x, "bilinear_upsample input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        result = Tensor._wrap(x.data.copy())
        tape, _ = _flags(x)
        if tape is not None:
            tape.record("bilinear_upsample", (x,), result, lambda g: (g,))
        return result
    ah = interpolation_matrix(h, out_h)
    aw = interpolation_matrix(w, out_w)
    out = np.matmul(ah, x.data @ aw.T)
    result = Tensor._wrap(out)

    tape, _ = _flags(x)
    if tape is None:
        return result

    def back(g):
        return (np.matmul(ah.T, g) @ aw,)

    tape.record("bilinear_upsample", (x,), result, back)
    return result


# --------------------------------------------------------------------------
# element-wise


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        y = expit(x.data)
        deriv = lambda g: g * y * (1.0 - y)  # noqa: E731
    elif kind == "tanh":
        y = np.tanh(x.data)
        deriv = lambda g: g * (1.0 - y * y)  # noqa: E731
    elif kind == "relu":
        mask = x.data > 0
        y = np.where(mask, x.data, 0.0)
        deriv = lambda g: np.where(mask, g, 0.0)  # noqa: E731
    else:
        raise ValueError(f"unknown activation {kind!r}; expected sigmoid, tanh or relu")
    result = Tensor._wrap(y)
    tape, _ = _flags(x)
    if tape is not None:
        tape.record(kind, (x,), result, lambda g: (deriv(g),))
    return result


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind}: shapes {a.shape} and {b.shape} differ")
    if kind == "mul":
        out = a.data * b.data
        back = lambda g: (g * b.data, g * a.data)  # noqa: E731
    elif kind == "add":
        out = a.data + b.data
        back = lambda g: (g, g)  # noqa: E731
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}; expected 'mul' or 'add'")
    result = Tensor._wrap(out)
    tape, _ = _flags(a, b)
    if tape is not None:
        tape.record(f"elementwise_{kind}", (a, b), result, back)
    return result


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _require_4d(a, "concat_channels first input")
    _require_4d(b, "concat_channels second input")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels: batch/spatial dims differ, {a.shape} vs {b.shape}")
    ca = a.shape[1]
    result = Tensor._wrap(np.concatenate([a.data, b.data], axis=1))
    tape, _ = _flags(a, b)
    if tape is not None:
        tape.record("concat_channels", (a, b), result, lambda g: (g[:, :ca], g[:, ca:]))
    return result


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _require_4d(x, "slice_channels input")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for {x.shape[1]} channels")
    result = Tensor._wrap(x.data[:, start:stop].copy())
    tape, _ = _flags(x)
    if tape is not None:

        def back(g):
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            return (gx,)

        tape.record("slice_channels", (x,), result, back)
    return result


# --------------------------------------------------------------------------
# reductions and loss


def sum_all(x: Tensor) -> Tensor:
    result = Tensor._wrap(np.array(x.data.sum()))
    tape, _ = _flags(x)
    if tape is not None:
        tape.record("sum", (x,), result, lambda g: (np.full_like(x.data, g),))
    return result


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)`` with constant weights."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {weights.shape} vs tensor {x.shape}")
    result = Tensor._wrap(np.array(np.sum(x.data * weights)))
    tape, _ = _flags(x)
    if tape is not None:
        tape.record("weighted_sum", (x,), result, lambda g: (g * weights,))
    return result


def softmax_ce_loss(logits: Tensor, labels, ignore_label: int = IGNORE_LABEL) -> Tensor:
    """Mean per-pixel cross-entropy over pixels whose label is not ignored."""
    _require_4d(logits, "softmax_ce_loss logits")
    labels = np.asarray(labels)
    n, k, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    valid = labels != ignore_label
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise ValueError(
            f"label {int(labels[bad][0])} outside [0, {k}) and not ignore_label={ignore_label}"
        )
    count = int(valid.sum())
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(z, safe[:, None], axis=1)[:, 0]
    per_pixel = np.log(se) - picked
    loss = float(per_pixel[valid].sum() / count) if count else 0.0
    result = Tensor._wrap(np.array(loss))

    tape, _ = _flags(logits)
    if tape is None:
        return result

    def back(g):
        if not count:
            return (np.zeros_like(logits.data),)
        p = ez / se[:, None]
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
        scale = np.where(valid, g / count, 0.0)[:, None]
        return ((p - onehot) * scale,)

    tape.record("softmax_ce_loss", (logits,), result, back)
    return result
