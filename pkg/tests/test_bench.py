import numpy as np
import pytest

from squeezetime import ModelConfig, build_model
from squeezetime.bench import BenchResult, baseline3d_compare, bench_forward, conv2d_naive, conv3d_naive
from squeezetime.nn import ops


def test_naive_conv2d_matches_kernel():
    rng = np.random.default_rng(0)
    x, w = rng.standard_normal((3, 6, 5)), rng.standard_normal((4, 3, 3, 3))
    np.testing.assert_allclose(conv2d_naive(x, w), ops.conv2d(x[None], w, padding=1)[0], rtol=1e-10, atol=1e-12)


def test_naive_conv3d_with_unit_depth_kernel_is_framewise_conv2d():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 5, 5))
    w3 = np.zeros((3, 2, 3, 3, 3))
    w3[:, :, 1] = rng.standard_normal((3, 2, 3, 3))
    out = conv3d_naive(x, w3)
    for t in range(4):
        np.testing.assert_allclose(out[:, t], conv2d_naive(x[:, t].copy(), w3[:, :, 1].copy()), rtol=1e-12)


def test_bench_result_statistics():
    r = BenchResult("m", 4, 0, 5, [0.5, 0.1, 0.2, 0.3, 0.4])
    assert r.median == 0.3 and r.throughput == pytest.approx(4 / 0.3)
    assert r.p95 == pytest.approx(np.percentile([0.1, 0.2, 0.3, 0.4, 0.5], 95))
    with pytest.raises(ValueError):
        BenchResult("m", 1, 0, 2, [0.1])


def test_bench_forward_records_environment():
    res = bench_forward(build_model(ModelConfig.toy()), batch=2, warmup=1, reps=3)
    assert len(res.times) == 3 and res.environment["threads"] == 1
    assert {"platform", "python", "numpy", "cpu_count"} <= set(res.environment)
    assert res.model_id.startswith("squeezetime-full-T4")
    with pytest.raises(ValueError):
        bench_forward(build_model(ModelConfig.toy()), reps=0)


def test_baseline_small_case_reports_exact_ratio():
    out = baseline3d_compare(c=2, h=6, w=6, k=3, frames=4, warmup=1, reps=3)
    assert out["ratio"] == 12 and isinstance(out["ratio"], int)
    assert out["flops_3d"] == 12 * out["flops_squeezed"]
    assert out["measured_ratio"] > 0 and "platform" in out["environment"]
