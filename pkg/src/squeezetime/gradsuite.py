"""Finite-difference gradient suite: every differentiable kernel, the block
composites, and the whole toy network, all in float64."""
from __future__ import annotations

from functools import partial
from typing import Callable

import numpy as np

from .config import ModelConfig
from .model import Executor, Model, build_model, ctl_block, execute, network, trace, wcm
from .nn import GradTape, grad_check, ops
from .nn.gradcheck import GradCheckResult


def check_kernel(kernel: Callable, inputs: dict[str, np.ndarray], *, seed: int = 0, step: float = 1e-5,
                 max_coords: int | None = None, **kwargs) -> GradCheckResult:
    """Check ``kernel(*inputs, **kwargs) -> (out, backward)`` on the scalar
    ``sum(out * R)`` for a fixed random ``R``. Inputs whose backward slot is
    ``None`` are treated as constants."""
    names = list(inputs)
    out, back = kernel(*inputs.values(), **kwargs)
    r = np.random.default_rng(seed + 7919).standard_normal(np.shape(out))
    grads = back(r)
    analytic = {n: g for n, g in zip(names, grads) if g is not None}
    point = {n: inputs[n] for n in analytic}

    def loss(p):
        o, _ = kernel(*(p.get(n, inputs[n]) for n in names), **kwargs)
        return float(np.sum(o * r))

    return grad_check(loss, point, analytic, step=step, max_coords=max_coords, seed=seed)


def _bn_train(x, gamma, beta, *, running):
    # fresh running buffers per call: the train-mode update must not leak
    # between finite-difference evaluations
    rm, rv = running
    out, back = ops.batchnorm2d_vjp(x, gamma, beta, rm.copy(), rv.copy(), training=True)
    return out, lambda g: back(g)[:3]


def _bn_infer(x, gamma, beta, *, running):
    out, back = ops.batchnorm2d_vjp(x, gamma, beta, *running, training=False)
    return out, lambda g: back(g)[:3]


def _xent(logits, *, labels):
    return ops.cross_entropy_vjp(logits, labels)


def kernel_cases(seed: int = 0) -> dict[str, tuple[Callable, dict, dict]]:
    """Small random float64 instances for every differentiable kernel."""
    rng = np.random.default_rng(seed)
    f = rng.standard_normal

    def away_from_zero(shape):
        # relu / max inputs kept at least 0.05 from their kinks
        x = f(shape)
        return x + np.sign(x) * 0.05

    running = (f(3), rng.uniform(0.5, 2.0, 3))
    return {
        "conv2d": (ops.conv2d_vjp, {"x": f((2, 3, 6, 6)), "weight": f((4, 3, 3, 3)), "bias": f(4)},
                   {"stride": 1, "padding": 1}),
        "conv2d_stride2": (ops.conv2d_vjp, {"x": f((2, 3, 7, 7)), "weight": f((2, 3, 2, 2)), "bias": f(2)},
                           {"stride": 2, "padding": 0}),
        "tfc2d": (ops.tfc2d_vjp, {"x": f((2, 3, 5, 5)), "weight": f((4, 3, 3, 3)),
                                  "channel_weights": rng.uniform(0.1, 1.0, (2, 3)), "bias": f(4)},
                  {"stride": 1, "padding": 1}),
        "linear": (ops.linear_vjp, {"x": f((3, 5)), "weight": f((4, 5)), "bias": f(4)}, {}),
        "relu": (ops.relu_vjp, {"x": away_from_zero((3, 4, 5))}, {}),
        "sigmoid": (ops.sigmoid_vjp, {"x": 3 * f((3, 4, 5))}, {}),
        "add": (ops.add_vjp, {"a": f((2, 3, 4, 4)), "b": f((3, 1, 1))}, {}),
        "mul": (ops.mul_vjp, {"a": f((2, 3, 4, 4)), "b": f((2, 3, 4, 4))}, {}),
        "global_max": (ops.global_max_vjp, {"x": f((2, 3, 4, 4))}, {}),
        "global_avg": (ops.global_avg_vjp, {"x": f((2, 3, 4, 4))}, {}),
        "batchnorm_train": (_bn_train, {"x": f((4, 3, 3, 3)), "gamma": f(3), "beta": f(3)},
                            {"running": running}),
        "batchnorm_infer": (_bn_infer, {"x": f((4, 3, 3, 3)), "gamma": f(3), "beta": f(3)},
                            {"running": running}),
        "cross_entropy": (_xent, {"logits": f((5, 4))}, {"labels": rng.integers(0, 4, 5)}),
    }


def check_kernels(seed: int = 0, step: float = 1e-5) -> dict[str, GradCheckResult]:
    return {name: check_kernel(k, inp, seed=seed, step=step, **kw)
            for name, (k, inp, kw) in kernel_cases(seed).items()}


def check_fragment(fn: Callable, input_shape, *, seed: int = 0, step: float = 1e-5, training: bool = False,
                   max_coords: int | None = None) -> GradCheckResult:
    """Check a network fragment ``fn(engine, x)`` with respect to its input
    and all its parameters, on ``sum(out * R)``."""
    rng = np.random.default_rng(seed)
    tracer, _ = trace(fn, input_shape, seed=seed, dtype=np.float64)
    params = tracer.params
    for k in params:
        if k.endswith(".beta") or k.endswith(".encoding") or k.endswith(".bias"):
            params[k][...] = rng.uniform(0.2, 0.6, params[k].shape)
    buffers = tracer.buffers
    x = rng.standard_normal(input_shape)

    def run(p, tape=None):
        xin = tape.watch(p["input"], "input") if tape is not None else p["input"]
        out, eng = execute(fn, {k: p[k] for k in params}, {k: v.copy() for k, v in buffers.items()},
                           xin, training=training, tape=tape)
        return out, eng

    point = {"input": x, **params}
    out, _ = run(point)
    r = rng.standard_normal(np.shape(out.data if hasattr(out, "data") else out))
    tape = GradTape()
    out, eng = run(point, tape)
    tape.backward(out, r)
    analytic = {"input": tape.watched[0].grad}
    analytic.update({k: (eng.vars[k].grad if k in eng.vars else np.zeros_like(v)) for k, v in params.items()})
    return grad_check(lambda p: float(np.sum(run(p)[0] * r)), point, analytic,
                      step=step, max_coords=max_coords, seed=seed)


def fragment_cases(cfg: ModelConfig | None = None) -> dict[str, tuple[Callable, tuple]]:
    cfg = cfg or ModelConfig.toy()
    return {
        "wcm": (lambda e, x: wcm(e, x, "wcm"), (2, 6, 4, 4)),
        "ctl_block": (lambda e, x: ctl_block(e, x, "blk", 16, cfg), (2, 16, 8, 8)),
        "ctl_block_entry": (lambda e, x: ctl_block(e, x, "blk", 16, cfg, entry=True), (2, 8, 8, 8)),
    }


# -- the composite toy network ------------------------------------------------


def conditioned_toy_point(seed: int = 0, batch: int = 4, cfg: ModelConfig | None = None):
    """A float64 toy model in infer mode at a well-conditioned point.

    Running statistics come from one train-mode pass over the batch (with a
    +0.5 variance margin), batchnorm shifts are drawn from U(0.5, 1) and
    position encodings from N(0, 0.1), so activations sit away from relu
    kinks and no normalizer divides by a near-zero variance.
    """
    cfg = cfg or ModelConfig.toy()
    model = build_model(cfg, seed=seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    x = rng.random((batch, 3, cfg.frames, *cfg.resolution))
    y = rng.integers(0, cfg.num_classes, batch)
    for k in model.params:
        if k.endswith(".encoding"):
            model.params[k][...] = rng.normal(0.0, 0.1, model.params[k].shape)
    network(Executor(model.params, model.buffers, training=True, bn_momentum=1.0), x, cfg)
    for k in model.params:
        if k.endswith(".beta"):
            model.params[k][...] = rng.uniform(0.5, 1.0, model.params[k].shape)
    for k in model.buffers:
        if k.endswith(".running_var"):
            model.buffers[k] += 0.5
    return model.eval(), x, y


def check_model(model: Model, x: np.ndarray, y: np.ndarray, *, step: float = 1e-5,
                max_coords: int | None = None, seed: int = 0) -> GradCheckResult:
    """Mean cross-entropy of ``model`` on ``(x, y)`` against every parameter."""
    _, _, grads = model.loss_and_grads(x, y)

    def loss(_):
        return float(ops.cross_entropy_vjp(model.forward(x), y)[0])

    return grad_check(loss, model.params, grads, step=step, max_coords=max_coords, seed=seed)


# -- mutation detection ---------------------------------------------------------


def _sigmoid_missing_factor(x):
    s, _ = ops.sigmoid_vjp(x)
    return s, lambda g: (g * s,)


def _bn_train_no_mean_terms(x, gamma, beta, *, running):
    # the backward of infer-mode normalization applied to a train-mode forward
    out, _ = ops.batchnorm2d_vjp(x, gamma, beta, running[0].copy(), running[1].copy(), training=True)
    inv_std = 1 / np.sqrt(x.var(axis=(0, 2, 3)) + 1e-5)
    xhat = (x - x.mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    return out, lambda g: (g * (gamma * inv_std).reshape(1, -1, 1, 1), (g * xhat).sum(axis=(0, 2, 3)),
                           g.sum(axis=(0, 2, 3)))


def _conv_unflipped_dw(x, weight, bias=None, stride=1, padding=0):
    out, back = ops.conv2d_vjp(x, weight, bias, stride, padding)

    def backward(g):
        dx, dw, db = back(g)
        return dx, dw[..., ::-1, ::-1], db

    return out, backward


def check_mutations(seed: int = 0) -> dict[str, GradCheckResult]:
    """Deliberately broken backward passes; each must show a large error."""
    cases = kernel_cases(seed)
    return {
        "sigmoid_missing_factor": check_kernel(_sigmoid_missing_factor, cases["sigmoid"][1], seed=seed),
        "batchnorm_train_no_mean_terms": check_kernel(_bn_train_no_mean_terms, cases["batchnorm_train"][1],
                                                      seed=seed, **cases["batchnorm_train"][2]),
        "conv2d_unflipped_dw": check_kernel(_conv_unflipped_dw, cases["conv2d"][1], seed=seed,
                                            **cases["conv2d"][2]),
    }
