"""Parameter and FLOP accounting.

Multiply-accumulate layers (conv, temporal focus conv, linear) cost
``c_in * k * k`` MACs per output element; under the ``flops2x`` convention
each MAC counts as two operations. Everything else (batchnorm, activations,
adds, pools, channel scaling) counts one operation per output element in
both conventions and is reported in its own rows, so conv-only totals can
be read off the same report.

The canonical convention is ``macs``: on the default network it lands on
the 5.5G reference figure while ``flops2x`` is twice that
(see :func:`calibrate_convention`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

from .model import Model, network, trace

CONVENTIONS = ("macs", "flops2x")
CANONICAL_CONVENTION = "macs"
MAC_KINDS = frozenset({"conv", "tfc", "linear"})


@dataclass
class CostRow:
    layer: str
    kind: str
    params: int
    flops: int
    out_shape: tuple[int, ...]


@dataclass
class CostReport:
    rows: list[CostRow]
    convention: str = CANONICAL_CONVENTION
    input_shape: tuple[int, ...] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def mac_layer_flops(self) -> int:
        """Total over conv / tfc / linear rows only."""
        return sum(r.flops for r in self.rows if r.kind in MAC_KINDS)

    def by_kind(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for r in self.rows:
            d = out.setdefault(r.kind, {"params": 0, "flops": 0})
            d["params"] += r.params
            d["flops"] += r.flops
        return out

    def totals(self) -> dict[str, int]:
        return {"params": self.total_params, "flops": self.total_flops,
                "mac_layer_flops": self.mac_layer_flops}


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")


def count_params(model: Model) -> CostReport:
    """Exact trainable-parameter counts per layer (running stats excluded)."""
    rows = [CostRow(l.name, l.kind, l.params, 0, l.out_shape) for l in model.layers if l.param_names]
    counted = {p for l in model.layers for p in l.param_names}
    missing = set(model.params) - counted
    if missing:
        raise RuntimeError(f"parameters not attributed to any layer: {sorted(missing)[:5]}")
    return CostReport(rows, meta={"what": "params"})


def count_flops(model: Model, input_shape=None, convention: str = CANONICAL_CONVENTION) -> CostReport:
    """Per-layer operation counts for one forward pass.

    ``input_shape`` is ``(3, T, h, w)`` for a single clip or
    ``(n, 3, T, h, w)``; it defaults to the model's configured clip.
    """
    _check_convention(convention)
    shape = tuple(model.input_shape if input_shape is None else input_shape)
    if len(shape) == 4:
        shape = (1, *shape)
    fn = partial(network, cfg=model.config)
    tracer, _ = trace(fn, shape, params=model.params, buffers=dict(model.buffers))
    return _report(tracer.layers, convention, shape)


def count_fragment(fn, input_shape, convention: str = CANONICAL_CONVENTION) -> CostReport:
    """Cost rows for any topology ``fn(engine, x)``, e.g. a single layer:
    ``count_fragment(lambda e, x: e.conv(x, "c", 3, 1), (1, 2, 4, 4))``."""
    _check_convention(convention)
    tracer, _ = trace(fn, tuple(input_shape), seed=0)
    return _report(tracer.layers, convention, tuple(input_shape))


def _report(layers, convention, shape) -> CostReport:
    factor = 2 if convention == "flops2x" else 1
    rows = [CostRow(l.name, l.kind, l.params, l.macs * factor + l.elementwise, l.out_shape) for l in layers]
    return CostReport(rows, convention, shape)


def analytic_complexity(paradigm: str, *, c_in: int, c_out: int, k: int, h: int, w: int,
                        t: int = 1, o_t: int = 0) -> int:
    """Closed-form per-layer cost of the three video paradigms.

    ``conv3d``: 2 c_out c_in k^3 h w t; ``conv2d_temporal``:
    2 c_out c_in k^2 h w t + o_t; ``squeezed``: 2 c_out c_in k^2 h w.
    """
    dims = (c_in, c_out, k, h, w, t)
    if any(d < 1 for d in dims) or o_t < 0:
        raise ValueError(f"dimensions must be positive, got {dims}, o_t={o_t}")
    if paradigm == "conv3d":
        return 2 * c_out * c_in * k ** 3 * h * w * t
    if paradigm == "conv2d_temporal":
        return 2 * c_out * c_in * k ** 2 * h * w * t + o_t
    if paradigm == "squeezed":
        return 2 * c_out * c_in * k ** 2 * h * w
    raise ValueError(f"unknown paradigm {paradigm!r}")


def calibrate_convention(model: Model, target: float, tol: float = 0.10) -> str:
    """Return the convention whose total lands within ``tol`` of ``target``
    operations, preferring the canonical one."""
    for conv in (CANONICAL_CONVENTION, *[c for c in CONVENTIONS if c != CANONICAL_CONVENTION]):
        total = count_flops(model, convention=conv).total_flops
        if abs(total - target) <= tol * target:
            return conv
    raise ValueError(f"no convention within {tol:.0%} of {target:g}")
