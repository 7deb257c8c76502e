"""Dense operator kernels with hand-written backward rules.

Every ``*_vjp`` kernel returns ``(output, backward)`` where ``backward(grad)``
maps the output cotangent to a tuple of input cotangents, one per positional
argument (``None`` for non-differentiable ones). The plain-named functions
are convenience wrappers returning only the forward value.

Image tensors are batched ``(n, c, h, w)``; the wrappers also accept a single
``(c, h, w)`` image and return an unbatched result. Convolution is
cross-correlation, i.e. ``out[o, y, x] = sum_{m,i,j} w[o, m, i, j] *
in[m, y*s + i - p, x*s + j - p]``, the usual deep-learning orientation.
"""
from __future__ import annotations

import contextlib
import contextvars

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "conv_output_size",
    "conv2d",
    "conv2d_vjp",
    "tfc2d",
    "tfc2d_vjp",
    "linear",
    "linear_vjp",
    "relu",
    "relu_vjp",
    "sigmoid",
    "sigmoid_vjp",
    "add",
    "add_vjp",
    "mul",
    "mul_vjp",
    "global_max",
    "global_max_vjp",
    "global_avg",
    "global_avg_vjp",
    "batchnorm2d",
    "batchnorm2d_vjp",
    "softmax",
    "cross_entropy_vjp",
    "record_kinks",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operator's contract."""


# Discrete decisions (relu masks, argmax locations) are logged here while a
# ``record_kinks`` block is active, so a finite-difference checker can tell
# when a perturbation crossed a non-differentiable point.
_kink_log: contextvars.ContextVar[list | None] = contextvars.ContextVar("kink_log", default=None)


@contextlib.contextmanager
def record_kinks():
    log: list = []
    token = _kink_log.set(log)
    try:
        yield log
    finally:
        _kink_log.reset(token)


def _log_kink(decision: np.ndarray) -> None:
    log = _kink_log.get()
    if log is not None:
        log.append(np.packbits(decision.ravel()) if decision.dtype == bool else decision.ravel().copy())


def _batched(x: np.ndarray, rank: int):
    if x.ndim == rank - 1:
        return x[None], True
    return x, False


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv(x, weight, stride, padding):
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (n, c, h, w), got rank {x.ndim}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (c_out, c_in, k, k), got rank {weight.ndim}")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"non-square kernel {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input channels {x.shape[1]} != kernel c_in {c_in}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride={stride} / padding={padding}")
    h, w = x.shape[2:]
    if h + 2 * padding < kh or w + 2 * padding < kh:
        raise ShapeError(f"spatial size {h}x{w} with padding {padding} smaller than kernel {kh}")


def conv2d_vjp(x, weight, bias=None, stride=1, padding=0):
    _check_conv(x, weight, stride, padding)
    c_out, c_in, k, _ = weight.shape
    n, _, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    # (n, c_in, ho, wo, k, k) strided view; tensordot materializes the im2col matrix
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(cols, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
        out = out + bias[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        dcols = np.tensordot(g, weight, axes=([1], [0]))  # (n, ho, wo, c_in, k, k)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    return out, backward


def conv2d(x, weight, bias=None, stride=1, padding=0):
    x, single = _batched(np.asarray(x), 4)
    out, _ = conv2d_vjp(x, weight, bias, stride, padding)
    return out[0] if single else out


def tfc2d_vjp(x, weight, channel_weights, bias=None, stride=1, padding=0):
    """Temporal focus convolution: each input channel is scaled by its
    data-dependent weight before the multiply-accumulate.

    ``channel_weights`` is ``(n, c_in)`` (one vector per sample) or ``(c_in,)``.
    """
    cw = np.asarray(channel_weights)
    shared = cw.ndim == 1
    if cw.shape[-1] != x.shape[1] or (not shared and cw.shape[0] != x.shape[0]):
        raise ShapeError(f"channel weights {cw.shape} do not match input {x.shape[:2]}")
    scale = cw[None, :, None, None] if shared else cw[:, :, None, None]
    xs = x * scale
    out, conv_back = conv2d_vjp(xs, weight, bias, stride, padding)

    def backward(g):
        dxs, dw, db = conv_back(g)
        dcw = (dxs * x).sum(axis=(2, 3))
        if shared:
            dcw = dcw.sum(axis=0)
        return dxs * scale, dw, dcw, db

    return out, backward


def tfc2d(x, weight, channel_weights, bias=None, stride=1, padding=0):
    x, single = _batched(np.asarray(x), 4)
    out, _ = tfc2d_vjp(x, weight, channel_weights, bias, stride, padding)
    return out[0] if single else out


def linear_vjp(x, weight, bias=None):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weights {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} != ({weight.shape[0]},)")
    out = x @ weight.T
    if bias is not None:
        out = out + bias

    def backward(g):
        return g @ weight, g.T @ x, (g.sum(axis=0) if bias is not None else None)

    return out, backward


def linear(x, weight, bias=None):
    x, single = _batched(np.asarray(x), 2)
    out, _ = linear_vjp(x, weight, bias)
    return out[0] if single else out


def relu_vjp(x):
    mask = x > 0
    _log_kink(mask)
    return np.where(mask, x, np.zeros((), dtype=x.dtype)), lambda g: (g * mask,)


def relu(x):
    return relu_vjp(np.asarray(x))[0]


def sigmoid_vjp(x):
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return out, lambda g: (g * out * (1 - out),)


def sigmoid(x):
    return sigmoid_vjp(np.asarray(x, dtype=np.result_type(x, np.float32)))[0]


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


def add_vjp(a, b):
    _check_broadcast(a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def add(a, b):
    return add_vjp(np.asarray(a), np.asarray(b))[0]


def mul_vjp(a, b):
    _check_broadcast(a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def mul(a, b):
    return mul_vjp(np.asarray(a), np.asarray(b))[0]


def global_max_vjp(x):
    """Per-channel spatial max; the gradient goes to the first maximal
    element in row-major order."""
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    _log_kink(idx)
    out = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]

    def backward(g):
        dx = np.zeros((n, c, h * w), dtype=g.dtype)
        np.put_along_axis(dx, idx[..., None], g[..., None], axis=2)
        return (dx.reshape(x.shape),)

    return out, backward


def global_max(x):
    x, single = _batched(np.asarray(x), 4)
    out = global_max_vjp(x)[0]
    return out[0] if single else out


def global_avg_vjp(x):
    n, c, h, w = x.shape
    out = x.mean(axis=(2, 3))
    return out, lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)


def global_avg(x):
    x, single = _batched(np.asarray(x), 4)
    out = global_avg_vjp(x)[0]
    return out[0] if single else out


def batchnorm2d_vjp(x, gamma, beta, running_mean, running_var, *, training,
                    eps=1e-5, momentum=0.1):
    """Batch normalization over ``(n, h, w)`` per channel.

    In training mode the running statistics are updated in place with an
    exponential moving average (unbiased variance, as is conventional).
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or running_mean.shape != (c,):
        raise ShapeError(f"batchnorm state has {gamma.shape[0]} channels, input has {c}")
    shape = (1, c, 1, 1)
    if training:
        count = n * h * w
        if count < 2:
            raise ShapeError("batchnorm in train mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.reshape(shape)
        if training:
            m = n * h * w
            dx = (inv_std / m).reshape(shape) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2, 3)).reshape(shape)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
            )
        else:
            dx = dxhat * inv_std.reshape(shape)
        return dx, dgamma, dbeta, None, None

    return out.astype(x.dtype, copy=False), backward


def batchnorm2d(x, gamma, beta, running_mean, running_var, *, training,
                eps=1e-5, momentum=0.1):
    return batchnorm2d_vjp(x, gamma, beta, running_mean, running_var,
                           training=training, eps=eps, momentum=momentum)[0]


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy_vjp(logits, labels):
    """Mean softmax cross-entropy over the batch."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = (logsum - z[np.arange(n), labels]).mean()

    def backward(g):
        d = softmax(logits, axis=1)
        d[np.arange(n), labels] -= 1
        return d * (g / n), None

    return np.asarray(loss, dtype=logits.dtype), backward
