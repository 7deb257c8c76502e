"""The squeezed-time network: time folded into channels, then a 2D backbone
of channel-time learning blocks.

The topology is written once, as plain functions over an *engine*
(:func:`network`, :func:`ctl_block`, :func:`ctl_module`, :func:`ioi_branch`,
:func:`wcm`). Two engines interpret it: :class:`ShapeTracer` propagates
shapes, allocates parameters and tallies per-layer costs; :class:`Executor`
runs the numeric kernels, optionally recording them on a
:class:`~squeezetime.nn.GradTape`.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .config import ModelConfig
from .nn import ops
from .nn.ops import ShapeError, conv_output_size
from .nn.tape import GradTape, Var, value

__all__ = [
    "LayerInfo",
    "ShapeTracer",
    "Executor",
    "Model",
    "build_model",
    "forward",
    "network",
    "ctl_block",
    "ctl_module",
    "ioi_branch",
    "wcm",
    "trace",
    "execute",
    "squeeze_time",
    "unsqueeze_time",
]


# --------------------------------------------------------------------------
# reshapes


def squeeze_time(video: np.ndarray) -> np.ndarray:
    """Fold the frame axis into channels: ``(3, T, h, w) -> (3T, h, w)``.

    Channel ``color * T + t`` holds frame ``t`` of ``color``. Batched input
    ``(n, 3, T, h, w)`` is accepted as well.
    """
    video = np.asarray(video)
    if video.ndim == 4:
        if video.shape[0] != 3:
            raise ShapeError(f"expected 3 colour channels first, got shape {video.shape}")
        c, t, h, w = video.shape
        return video.reshape(c * t, h, w)
    if video.ndim == 5:
        if video.shape[1] != 3:
            raise ShapeError(f"expected (n, 3, T, h, w), got shape {video.shape}")
        n, c, t, h, w = video.shape
        return video.reshape(n, c * t, h, w)
    raise ShapeError(f"expected a rank-4 or rank-5 video, got rank {video.ndim}")


def unsqueeze_time(x: np.ndarray, frames: int) -> np.ndarray:
    x = np.asarray(x)
    lead = x.shape[:-3]
    c, h, w = x.shape[-3:]
    if c != 3 * frames:
        raise ShapeError(f"{c} channels cannot be split into 3 x {frames} frames")
    return x.reshape(*lead, 3, frames, h, w)


# --------------------------------------------------------------------------
# engines


@dataclass
class LayerInfo:
    name: str
    kind: str
    params: int
    macs: int
    elementwise: int
    out_shape: tuple[int, ...]
    kernel: int | None = None
    stride: int | None = None
    param_names: tuple[str, ...] = ()


class ShapeTracer:
    """Runs the topology on shapes only.

    With ``init_rng`` set, missing parameters are allocated and initialized
    (fan-in scaled Gaussian for conv/linear weights, BN gamma=1 beta=0,
    zero biases and position encodings).
    """

    def __init__(self, params=None, buffers=None, init_rng=None, dtype=np.float32):
        self.params = {} if params is None else params
        self.buffers = {} if buffers is None else buffers
        self.rng = init_rng
        self.dtype = dtype
        self.layers: list[LayerInfo] = []
        self._last = "input"

    # -- parameter handling
    def _param(self, name, shape, init):
        if name not in self.params:
            if self.rng is None:
                raise KeyError(f"missing parameter {name!r}")
            if init == "normal":
                fan_in = int(np.prod(shape[1:]))
                arr = self.rng.standard_normal(shape, dtype=np.float32) * np.float32(np.sqrt(2.0 / fan_in))
            elif init == "ones":
                arr = np.ones(shape, np.float32)
            else:
                arr = np.zeros(shape, np.float32)
            self.params[name] = arr.astype(self.dtype, copy=False)
        elif self.params[name].shape != tuple(shape):
            raise ShapeError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
        return name

    def _row(self, name, kind, out_shape, *, macs=0, elementwise=0, param_names=(), kernel=None, stride=None):
        n_params = sum(int(np.prod(self.params[p].shape)) for p in param_names)
        self.layers.append(LayerInfo(name, kind, n_params, int(macs), int(elementwise),
                                     tuple(out_shape), kernel, stride, tuple(param_names)))
        if param_names or kind in ("squeeze",):
            self._last = name
        return tuple(out_shape)

    def _anon(self, kind):
        return f"{self._last}:{kind}"

    # -- ops
    def squeeze_time(self, x):
        n, c, t, h, w = x
        if c != 3:
            raise ShapeError(f"expected (n, 3, T, h, w), got {x}")
        return self._row("squeeze", "squeeze", (n, c * t, h, w))

    def _conv_shape(self, x, c_out, k, stride, padding):
        n, c, h, w = x
        if h + 2 * padding < k or w + 2 * padding < k:
            raise ShapeError(f"spatial size {h}x{w} too small for kernel {k}")
        return (n, c_out, conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding))

    def conv(self, x, name, c_out, k, stride=1, padding=None, bias=False):
        padding = k // 2 if padding is None else padding
        out = self._conv_shape(x, c_out, k, stride, padding)
        names = [self._param(f"{name}.weight", (c_out, x[1], k, k), "normal")]
        if bias:
            names.append(self._param(f"{name}.bias", (c_out,), "zeros"))
        macs = int(np.prod(out)) * x[1] * k * k
        return self._row(name, "conv", out, macs=macs, param_names=names, kernel=k, stride=stride)

    def tfc(self, x, weights, name, c_out, k, stride=1, padding=None):
        padding = k // 2 if padding is None else padding
        out = self._conv_shape(x, c_out, k, stride, padding)
        names = [self._param(f"{name}.weight", (c_out, x[1], k, k), "normal")]
        macs = int(np.prod(out)) * x[1] * k * k
        # per-channel scaling: one multiply per input element
        self._row(f"{name}:scale", "scale", x, elementwise=int(np.prod(x)))
        return self._row(name, "tfc", out, macs=macs, param_names=names, kernel=k, stride=stride)

    def bn(self, x, name):
        c = x[1]
        names = [self._param(f"{name}.gamma", (c,), "ones"), self._param(f"{name}.beta", (c,), "zeros")]
        for buf, fill in (("running_mean", 0.0), ("running_var", 1.0)):
            key = f"{name}.{buf}"
            if key not in self.buffers:
                self.buffers[key] = np.full((c,), fill, dtype=self.dtype)
        return self._row(name, "bn", x, elementwise=int(np.prod(x)), param_names=names)

    def relu(self, x):
        return self._row(self._anon("relu"), "relu", x, elementwise=int(np.prod(x)))

    def sigmoid(self, x):
        return self._row(self._anon("sigmoid"), "sigmoid", x, elementwise=int(np.prod(x)))

    def add(self, a, b):
        out = np.broadcast_shapes(a, b)
        return self._row(self._anon("add"), "add", out, elementwise=int(np.prod(out)))

    def mul(self, a, b):
        out = np.broadcast_shapes(a, b)
        return self._row(self._anon("mul"), "mul", out, elementwise=int(np.prod(out)))

    def add_param(self, x, name, shape):
        names = [self._param(f"{name}.encoding", shape, "zeros")]
        return self._row(name, "pos", x, elementwise=int(np.prod(x)), param_names=names)

    def global_max(self, x):
        return self._row(self._anon("maxpool"), "pool", x[:2], elementwise=x[0] * x[1])

    def global_avg(self, x):
        return self._row(self._anon("avgpool"), "pool", x[:2], elementwise=x[0] * x[1])

    def linear(self, x, name, d_out, bias=True):
        n, d_in = x
        names = [self._param(f"{name}.weight", (d_out, d_in), "normal")]
        if bias:
            names.append(self._param(f"{name}.bias", (d_out,), "zeros"))
        return self._row(name, "linear", (n, d_out), macs=n * d_in * d_out, param_names=names)

    @staticmethod
    def channels(x):
        return x[1]


class Executor:
    """Numeric interpretation of the topology.

    With a tape, parameters are watched as :class:`Var` objects (cached by
    name, so shared parameters accumulate gradient) and every kernel call is
    recorded.
    """

    def __init__(self, params, buffers, *, training=False, tape: GradTape | None = None,
                 bn_momentum=0.1, bn_eps=1e-5):
        self.params = params
        self.buffers = buffers
        self.training = training
        self.tape = tape
        self.vars: dict[str, Var] = {}
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps

    def p(self, name):
        try:
            arr = self.params[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None
        if self.tape is None:
            return arr
        if name not in self.vars:
            self.vars[name] = self.tape.watch(arr, name)
        return self.vars[name]

    def _call(self, kernel, *args, **kwargs):
        if self.tape is not None:
            return self.tape.apply(kernel, *args, **kwargs)
        return kernel(*args, **kwargs)[0]

    def squeeze_time(self, x):
        arr = value(x)
        out = squeeze_time(arr)
        if self.tape is None:
            return out
        return self.tape.apply(lambda a: (squeeze_time(a), lambda g: (g.reshape(a.shape),)), x)

    def conv(self, x, name, c_out, k, stride=1, padding=None, bias=False):
        padding = k // 2 if padding is None else padding
        b = self.p(f"{name}.bias") if bias else None
        return self._call(ops.conv2d_vjp, x, self.p(f"{name}.weight"), b, stride, padding)

    def tfc(self, x, weights, name, c_out, k, stride=1, padding=None):
        padding = k // 2 if padding is None else padding
        return self._call(ops.tfc2d_vjp, x, self.p(f"{name}.weight"), weights, None, stride, padding)

    def bn(self, x, name):
        return self._call(
            ops.batchnorm2d_vjp, x, self.p(f"{name}.gamma"), self.p(f"{name}.beta"),
            self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
            training=self.training, eps=self.bn_eps, momentum=self.bn_momentum,
        )

    def relu(self, x):
        return self._call(ops.relu_vjp, x)

    def sigmoid(self, x):
        return self._call(ops.sigmoid_vjp, x)

    def add(self, a, b):
        return self._call(ops.add_vjp, a, b)

    def mul(self, a, b):
        return self._call(ops.mul_vjp, a, b)

    def add_param(self, x, name, shape):
        return self._call(ops.add_vjp, x, self.p(f"{name}.encoding"))

    def global_max(self, x):
        return self._call(ops.global_max_vjp, x)

    def global_avg(self, x):
        return self._call(ops.global_avg_vjp, x)

    def linear(self, x, name, d_out, bias=True):
        b = self.p(f"{name}.bias") if bias else None
        return self._call(ops.linear_vjp, x, self.p(f"{name}.weight"), b)

    @staticmethod
    def channels(x):
        return value(x).shape[1]


# --------------------------------------------------------------------------
# topology


def conv_bn_relu(eng, x, name, c_out, k, stride=1, padding=None, relu=True):
    x = eng.bn(eng.conv(x, name, c_out, k, stride, padding), f"{name}_bn")
    return eng.relu(x) if relu else x


def wcm(eng, x, name, ratio=1.0):
    """Weight computation module: global max pool, then a two-layer MLP with
    a sigmoid output, giving one weight in (0, 1) per input channel."""
    c = eng.channels(x)
    hidden = max(1, int(round(c * ratio)))
    s = eng.global_max(x)
    s = eng.relu(eng.linear(s, f"{name}.fc1", hidden))
    return eng.sigmoid(eng.linear(s, f"{name}.fc2", c))


def _focus_conv(eng, x, weights, name, c_out, k):
    if weights is None:
        return eng.conv(x, name, c_out, k)
    return eng.tfc(x, weights, name, c_out, k)


def ioi_branch(eng, x, weights, name, frames, c_out, pos_encoding=True):
    """Inter-temporal object interaction.

    Gate path: 3x3 focus conv down to ``frames`` channels, add the temporal
    position encoding, 7x7 relation conv, 3x3 conv up to ``c_out`` and a
    sigmoid. Value path: a 3x3 conv straight to ``c_out``. Output is their
    elementwise product.
    """
    if frames < 1 or c_out < 1:
        raise ShapeError(f"frames and c_out must be positive, got {frames}, {c_out}")
    t = eng.relu(eng.bn(_focus_conv(eng, x, weights, f"{name}.reduce", frames, 3), f"{name}.reduce_bn"))
    if pos_encoding:
        t = eng.add_param(t, f"{name}.pos", (frames, 1, 1))
    t = conv_bn_relu(eng, t, f"{name}.relate", frames, 7)
    gate = eng.sigmoid(eng.conv(t, f"{name}.expand", c_out, 3))
    v = conv_bn_relu(eng, x, f"{name}.value", c_out, 3)
    return eng.mul(gate, v)


def ctl_module(eng, x, name, cfg: ModelConfig):
    """Channel-time learning module: 1x1 focus-conv branch plus interaction
    branch, summed. Both focus convs share one set of channel weights."""
    c = eng.channels(x)
    if cfg.variant == "base":
        return conv_bn_relu(eng, x, f"{name}.conv", c, 3)
    weights = wcm(eng, x, f"{name}.wcm", cfg.wcm_ratio) if cfg.focus else None
    out = None
    if cfg.variant in ("full", "tfc"):
        out = eng.relu(eng.bn(_focus_conv(eng, x, weights, f"{name}.focus", c, 1), f"{name}.focus_bn"))
    if cfg.variant in ("full", "ioi"):
        b2 = ioi_branch(eng, x, weights, f"{name}.ioi", cfg.temporal_width, c, cfg.pos_encoding)
        out = b2 if out is None else eng.add(out, b2)
    return out


def ctl_block(eng, x, name, width, cfg: ModelConfig, entry=False):
    """Bottleneck around the CTL module.

    Regular blocks are channel preserving with an identity shortcut. The
    stage-entry block instead reduces with a 2x2 stride-2 convolution from
    the previous width, so it downsamples and changes width; it has no
    shortcut.
    """
    mid = cfg.bottleneck(width)
    if mid < 1:
        raise ShapeError(f"bottleneck width rounds to {mid}")
    if entry:
        h = conv_bn_relu(eng, x, f"{name}.reduce", mid, 2, stride=2, padding=0)
    else:
        if eng.channels(x) != width:
            raise ShapeError(f"{name}: block input has {eng.channels(x)} channels, expected {width}")
        h = conv_bn_relu(eng, x, f"{name}.reduce", mid, 1)
    h = ctl_module(eng, h, f"{name}.ctl", cfg)
    h = conv_bn_relu(eng, h, f"{name}.expand", width, 1, relu=False)
    return h if entry else eng.add(h, x)


def network(eng, x, cfg: ModelConfig, head=True):
    x = eng.squeeze_time(x)
    x = conv_bn_relu(eng, x, "stem", cfg.stem_width, 5, stride=2)
    for i, (width, blocks) in enumerate(zip(cfg.widths, cfg.stage_blocks), 1):
        for b in range(blocks):
            x = ctl_block(eng, x, f"stage{i}.block{b}", width, cfg, entry=(b == 0))
    if not head:
        return x
    x = eng.global_avg(x)
    return eng.linear(x, "head.fc", cfg.num_classes)


# --------------------------------------------------------------------------
# generic drivers


def trace(fn: Callable, input_shape, *, params=None, buffers=None, seed=None, dtype=np.float32):
    """Shape-trace ``fn(engine, x)``; allocates parameters when ``seed`` is given."""
    rng = np.random.default_rng(seed) if seed is not None else None
    tracer = ShapeTracer(params, buffers, rng, dtype)
    out = fn(tracer, tuple(int(s) for s in input_shape))
    return tracer, out


def execute(fn: Callable, params, buffers, x, *, training=False, tape=None):
    eng = Executor(params, buffers, training=training, tape=tape)
    return fn(eng, x), eng


@dataclass
class Model:
    """A built network: named parameters, batchnorm running state, and the
    per-layer metadata traced at the configured input shape."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    layers: list[LayerInfo] = field(repr=False)
    mode: str = "infer"

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return (3, self.config.frames, *self.config.resolution)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def train(self) -> "Model":
        self.mode = "train"
        return self

    def eval(self) -> "Model":
        self.mode = "infer"
        return self

    def num_params(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.buffers.items()}, copy.deepcopy(self.layers), self.mode)

    def astype(self, dtype) -> "Model":
        m = self.copy()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        m.buffers = {k: v.astype(dtype) for k, v in m.buffers.items()}
        return m

    def _check_batch(self, batch):
        if batch.ndim != 5 or tuple(batch.shape[1:]) != self.input_shape:
            raise ShapeError(f"expected batch (n, {', '.join(map(str, self.input_shape))}), got {batch.shape}")

    def forward(self, batch, tape: GradTape | None = None, head=True):
        batch = value(batch)
        self._check_batch(batch)
        if self.mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {self.mode!r}")
        x = tape.watch(batch, "input") if tape is not None else batch
        fn = partial(network, cfg=self.config, head=head)
        out, eng = execute(fn, self.params, self.buffers, x, training=self.mode == "train", tape=tape)
        self._last_vars = eng.vars
        return out

    def features(self, batch) -> np.ndarray:
        """Final feature map ``(n, C_out, F_h, F_w)`` before pooling."""
        return self.forward(batch, head=False)

    def loss_and_grads(self, batch, labels):
        """Mean cross-entropy and gradients for every parameter."""
        tape = GradTape()
        logits = self.forward(batch, tape)
        loss = tape.apply(ops.cross_entropy_vjp, logits, np.asarray(labels))
        tape.backward(loss)
        grads = {k: (self._last_vars[k].grad if k in self._last_vars else np.zeros_like(v))
                 for k, v in self.params.items()}
        return float(loss.data), logits.data, grads


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Allocate and initialize a model; identical seeds give identical bytes."""
    fn = partial(network, cfg=config)
    tracer, _ = trace(fn, (1, *(3, config.frames, *config.resolution)), seed=seed, dtype=dtype)
    return Model(config, tracer.params, tracer.buffers, tracer.layers)


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    return model.forward(batch)
