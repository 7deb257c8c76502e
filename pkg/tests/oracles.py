"""Brute-force reference implementations.

Everything here is written as explicit loops over output coordinates so it
shares no code path (padding helpers, strided views, tensordot) with the
kernels under test.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d_ref(x, w, b=None, stride=1, padding=0):
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for s in range(n):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for di in range(k):
                        for dj in range(k):
                            y, xx = i * stride + di - padding, j * stride + dj - padding
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += float(np.dot(x[s, :, y, xx], w[o, :, di, dj]))
                    out[s, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def tfc2d_ref(x, w, cw, b=None, stride=1, padding=0):
    """Each input channel ``c`` of sample ``s`` enters the sum scaled by ``cw[s, c]``."""
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    cw = np.broadcast_to(cw, (n, c_in))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for s in range(n):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(c_in):
                        for di in range(k):
                            for dj in range(k):
                                y, xx = i * stride + di - padding, j * stride + dj - padding
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += cw[s, c] * w[o, c, di, dj] * x[s, c, y, xx]
                    out[s, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def linear_ref(x, w, b=None):
    n, d_in = x.shape
    out = np.zeros((n, w.shape[0]))
    for s in range(n):
        for o in range(w.shape[0]):
            out[s, o] = math.fsum(x[s, i] * w[o, i] for i in range(d_in)) + (b[o] if b is not None else 0.0)
    return out


def global_max_ref(x):
    n, c = x.shape[:2]
    return np.array([[max(x[s, ch].ravel().tolist()) for ch in range(c)] for s in range(n)])


def global_avg_ref(x):
    n, c = x.shape[:2]
    return np.array([[math.fsum(x[s, ch].ravel().tolist()) / x[s, ch].size for ch in range(c)] for s in range(n)])


def batchnorm_ref(x, gamma, beta, mean=None, var=None, eps=1e-5):
    """Batch statistics when ``mean``/``var`` are None (train mode)."""
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for ch in range(c):
        vals = x[:, ch].ravel().tolist()
        if mean is None:
            mu = math.fsum(vals) / len(vals)
            v = math.fsum((a - mu) ** 2 for a in vals) / len(vals)
        else:
            mu, v = float(mean[ch]), float(var[ch])
        out[:, ch] = gamma[ch] * (x[:, ch] - mu) / math.sqrt(v + eps) + beta[ch]
    return out


def relu_ref(x):
    return np.where(x > 0, x, 0.0)


def sigmoid_ref(x):
    flat = [1.0 / (1.0 + math.exp(-a)) if a >= 0 else math.exp(a) / (1.0 + math.exp(a)) for a in np.ravel(x)]
    return np.array(flat).reshape(np.shape(x))


def wcm_ref(x, p, name):
    s = global_max_ref(x)
    hdn = relu_ref(linear_ref(s, p[f"{name}.fc1.weight"], p[f"{name}.fc1.bias"]))
    return sigmoid_ref(linear_ref(hdn, p[f"{name}.fc2.weight"], p[f"{name}.fc2.bias"]))


# -- compositional oracle of the network (infer-mode batchnorm) ------------------


def _bn(x, p, b, name):
    return batchnorm_ref(x, p[f"{name}.gamma"], p[f"{name}.beta"], b[f"{name}.running_mean"],
                         b[f"{name}.running_var"])


def _cbr(x, p, b, name, k, stride=1, padding=None, relu=True):
    padding = k // 2 if padding is None else padding
    y = _bn(conv2d_ref(x, p[f"{name}.weight"], None, stride, padding), p, b, f"{name}_bn")
    return relu_ref(y) if relu else y


def ctl_module_ref(x, p, b, name, frames):
    """Shared channel weights feed both focus convolutions. Branch one: 1x1
    focus conv, BN, relu. Branch two: a sigmoid gate built from the frame
    channels (3x3 focus conv to T channels, BN, relu, + position encoding,
    7x7 conv, BN, relu, 3x3 conv back) multiplies a 3x3 conv/BN/relu value
    path. The branches are summed."""
    cw = wcm_ref(x, p, f"{name}.wcm")
    b1 = relu_ref(_bn(tfc2d_ref(x, p[f"{name}.focus.weight"], cw, None, 1, 0), p, b, f"{name}.focus_bn"))
    t = relu_ref(_bn(tfc2d_ref(x, p[f"{name}.ioi.reduce.weight"], cw, None, 1, 1), p, b, f"{name}.ioi.reduce_bn"))
    t = t + p[f"{name}.ioi.pos.encoding"][None]
    t = _cbr(t, p, b, f"{name}.ioi.relate", 7)
    gate = sigmoid_ref(conv2d_ref(t, p[f"{name}.ioi.expand.weight"], None, 1, 1))
    v = _cbr(x, p, b, f"{name}.ioi.value", 3)
    return b1 + gate * v


def ctl_block_ref(x, p, b, name, frames, entry):
    if entry:
        h = _cbr(x, p, b, f"{name}.reduce", 2, stride=2, padding=0)
    else:
        h = _cbr(x, p, b, f"{name}.reduce", 1)
    h = ctl_module_ref(h, p, b, f"{name}.ctl", frames)
    h = _cbr(h, p, b, f"{name}.expand", 1, relu=False)
    return h if entry else h + x


def network_ref(video_batch, p, b, cfg):
    n, c, t, h, w = video_batch.shape
    x = np.zeros((n, c * t, h, w))
    for col in range(c):
        for f in range(t):
            x[:, col * t + f] = video_batch[:, col, f]
    x = _cbr(x, p, b, "stem", 5, stride=2)
    for i, blocks in enumerate(cfg.stage_blocks, 1):
        for blk in range(blocks):
            x = ctl_block_ref(x, p, b, f"stage{i}.block{blk}", cfg.temporal_width, entry=blk == 0)
    return linear_ref(global_avg_ref(x), p["head.fc.weight"], p["head.fc.bias"])
