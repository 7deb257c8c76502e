"""Latency/throughput harness and the single-layer 3D-vs-squeezed comparison."""
from __future__ import annotations

import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import analytic_complexity
from .model import Model


def environment_stamp(threads: int) -> dict:
    return {"platform": platform.platform(), "python": platform.python_version(),
            "numpy": np.__version__, "machine": platform.machine(),
            "cpu_count": os.cpu_count(), "threads": threads}


@dataclass
class BenchResult:
    model_id: str
    batch: int
    warmup: int
    reps: int
    times: list[float]  # seconds per rep
    environment: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != self.reps or not all(t > 0 for t in self.times):
            raise ValueError("need one positive time per rep")

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.times, 95))

    @property
    def throughput(self) -> float:
        """Clips per second at the median rep time."""
        return self.batch / self.median

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(median=self.median, p95=self.p95, throughput=self.throughput)
        return d


def _time_reps(fn, warmup, reps):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def bench_forward(model: Model, batch: int = 1, warmup: int = 2, reps: int = 10, threads: int = 1,
                  seed: int = 0, model_id: str | None = None) -> BenchResult:
    """Time infer-mode forward passes on a fixed seeded input."""
    if reps < 1 or warmup < 0 or batch < 1 or threads < 1:
        raise ValueError("need reps >= 1, warmup >= 0, batch >= 1, threads >= 1")
    x = np.random.default_rng(seed).standard_normal((batch, *model.input_shape)).astype(model.dtype)
    m = model.copy().eval()
    with threadpool_limits(limits=threads):
        times = _time_reps(lambda: m.forward(x), warmup, reps)
    c = model.config
    mid = model_id or f"squeezetime-{c.variant}-T{c.frames}-{c.resolution[0]}x{c.resolution[1]}-cf{c.channel_factor:g}"
    return BenchResult(mid, batch, warmup, reps, times, environment_stamp(threads))


# Naive direct-loop kernels: every MAC costs the same in both, so wall time
# tracks MAC count rather than library dispatch overhead.

@numba.njit(cache=True)
def conv3d_naive(x, w):
    """``x (c_in, t, h, w)``, ``w (c_out, c_in, k, k, k)``, zero 'same' padding, stride 1."""
    c_in, t, h, wd = x.shape
    c_out, _, k, _, _ = w.shape
    p = k // 2
    out = np.zeros((c_out, t, h, wd), dtype=x.dtype)
    for o in range(c_out):
        for i in range(c_in):
            for dt in range(k):
                for dy in range(k):
                    for dx in range(k):
                        wv = w[o, i, dt, dy, dx]
                        for tt in range(t):
                            ts = tt + dt - p
                            if ts < 0 or ts >= t:
                                continue
                            for yy in range(h):
                                ys = yy + dy - p
                                if ys < 0 or ys >= h:
                                    continue
                                for xx in range(wd):
                                    xs = xx + dx - p
                                    if xs >= 0 and xs < wd:
                                        out[o, tt, yy, xx] += wv * x[i, ts, ys, xs]
    return out


@numba.njit(cache=True)
def conv2d_naive(x, w):
    """``x (c_in, h, w)``, ``w (c_out, c_in, k, k)``, zero 'same' padding, stride 1."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((c_out, h, wd), dtype=x.dtype)
    for o in range(c_out):
        for i in range(c_in):
            for dy in range(k):
                for dx in range(k):
                    wv = w[o, i, dy, dx]
                    for yy in range(h):
                        ys = yy + dy - p
                        if ys < 0 or ys >= h:
                            continue
                        for xx in range(wd):
                            xs = xx + dx - p
                            if xs >= 0 and xs < wd:
                                out[o, yy, xx] += wv * x[i, ys, xs]
    return out


def baseline3d_compare(c: int = 8, h: int = 16, w: int = 16, k: int = 3, frames: int = 16,
                       warmup: int = 2, reps: int = 9, seed: int = 0) -> dict:
    """One k^3 3D conv over ``(c, T, h, w)`` against one k^2 conv on the
    squeezed clip, with the same input and output channel counts.

    Returns analytic costs and their ratio (k * T) plus the measured ratio
    of median wall times.
    """
    rng = np.random.default_rng(seed)
    x3 = rng.standard_normal((c, frames, h, w)).astype(np.float32)
    w3 = rng.standard_normal((c, c, k, k, k)).astype(np.float32)
    x2 = rng.standard_normal((c, h, w)).astype(np.float32)
    w2 = rng.standard_normal((c, c, k, k)).astype(np.float32)
    f3 = analytic_complexity("conv3d", c_in=c, c_out=c, k=k, h=h, w=w, t=frames)
    f2 = analytic_complexity("squeezed", c_in=c, c_out=c, k=k, h=h, w=w)
    # at least one warmup call so JIT compilation is never timed
    t3 = _time_reps(lambda: conv3d_naive(x3, w3), max(warmup, 1), reps)
    t2 = _time_reps(lambda: conv2d_naive(x2, w2), max(warmup, 1), reps)
    m3, m2 = float(np.median(t3)), float(np.median(t2))
    return {"flops_3d": f3, "flops_squeezed": f2, "ratio": f3 // f2 if f3 % f2 == 0 else f3 / f2,
            "measured_ratio": m3 / m2, "time_3d": m3, "time_squeezed": m2,
            "dims": {"c": c, "h": h, "w": w, "k": k, "frames": frames},
            "environment": environment_stamp(1)}
