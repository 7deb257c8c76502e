import numpy as np
import pytest

from squeezetime import gradsuite
from squeezetime.nn import GradCheckError, GradTape, grad_check, ops

OP_TOL = 1e-6


def test_quadratic_is_exact():
    x = np.array([1.0, 2.0, 3.0])
    res = grad_check(lambda p: float(np.sum(p["x"] ** 2)), {"x": x}, {"x": 2 * x})
    assert res.max_relative_error < 1e-9
    assert res.checked == 3


def test_rejects_float32_points():
    with pytest.raises(GradCheckError, match="float64"):
        grad_check(lambda p: 0.0, {"x": np.zeros(2, np.float32)}, {"x": np.zeros(2)})


def test_non_finite_loss_reports_coordinate():
    x = np.array([1.0, 0.0])

    def loss(p):
        with np.errstate(invalid="ignore"):
            return float(np.sum(np.sqrt(p["x"])))

    with pytest.raises(GradCheckError, match=r"x\(1,\)"):
        grad_check(loss, {"x": x}, {"x": np.zeros(2)})


def test_kink_crossings_are_skipped_and_counted():
    x = np.array([0.5, 3e-6, -2.0])

    def loss(p):
        with_tape = ops.relu_vjp(p["x"])[0]
        return float(np.sum(with_tape))

    res = grad_check(loss, {"x": x}, {"x": np.array([1.0, 1.0, 0.0])})
    assert res.skipped_kinks == 1 and res.checked == 2
    assert res.max_relative_error < 1e-9


def test_sampled_coordinates_are_deterministic():
    x = np.random.default_rng(0).standard_normal(50)
    f = lambda p: float(np.sum(np.sin(p["x"])))  # noqa: E731
    a = grad_check(f, {"x": x}, {"x": np.cos(x)}, max_coords=7, seed=3)
    b = grad_check(f, {"x": x}, {"x": np.cos(x)}, max_coords=7, seed=3)
    assert a.checked == b.checked == 7 and a.max_relative_error == b.max_relative_error


@pytest.mark.parametrize("name", list(gradsuite.kernel_cases()))
def test_every_kernel_backward(name):
    kernel, inputs, kw = gradsuite.kernel_cases(seed=0)[name]
    res = gradsuite.check_kernel(kernel, inputs, seed=0, **kw)
    assert res.checked > 0
    assert res.max_relative_error < OP_TOL, (name, res.worst)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_kernels_at_other_points(seed):
    for name, r in gradsuite.check_kernels(seed).items():
        assert r.max_relative_error < OP_TOL, (name, seed, r.worst)


@pytest.mark.parametrize("name", list(gradsuite.check_mutations()))
def test_mutated_backward_is_detected(name):
    assert gradsuite.check_mutations()[name].max_relative_error > 1e-3


@pytest.mark.parametrize("training", [False, True])
def test_wcm_fragment(training):
    fn, shape = gradsuite.fragment_cases()["wcm"]
    res = gradsuite.check_fragment(fn, shape, training=training)
    assert res.max_relative_error < 1e-6


@pytest.mark.parametrize("case", ["ctl_block", "ctl_block_entry"])
@pytest.mark.parametrize("training", [False, True])
def test_block_fragments(case, training):
    # Block outputs summed against random weights give losses of order 10-100,
    # so central differences carry 1e-9 to 1e-8 absolute roundoff; a handful of
    # coordinates have gradients of order 1e-5 and their relative error
    # reflects that floor, not the backward. Bound both.
    fn, shape = gradsuite.fragment_cases()[case]
    res = gradsuite.check_fragment(fn, shape, training=training, max_coords=150)
    assert res.max_abs_error < 5e-8
    assert res.max_relative_error < 1e-4


def test_tape_accumulates_shared_inputs():
    tape = GradTape()
    x = tape.watch(np.array([2.0, 3.0]))
    y = tape.apply(ops.mul_vjp, x, x)
    z = tape.apply(ops.add_vjp, y, x)
    tape.backward(z)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_unused_watched_var_gets_zero_grad():
    tape = GradTape()
    x = tape.watch(np.ones(2))
    unused = tape.watch(np.ones(3))
    tape.backward(tape.apply(ops.relu_vjp, x))
    assert np.array_equal(unused.grad, np.zeros(3))


def test_model_gradients_sampled_at_conditioned_point():
    """Fast sampled version of the whole-model check (every tensor, 3
    coordinates each); the exhaustive run lives in the acceptance suite."""
    model, x, y = gradsuite.conditioned_toy_point(seed=0)
    res = gradsuite.check_model(model, x, y, max_coords=3, seed=0)
    assert res.max_abs_error < 1e-9
    assert res.max_relative_error < 1e-5


def test_tiny_model_gradients_agree_at_wider_steps():
    """The coordinate flagged by the exhaustive check has an analytic gradient
    near -1e-6. Central differences there trace the usual V: roundoff-bound
    below h=1e-5, truncation-bound above 1e-4, and within 1e-5 relative of
    the analytic value at h=1e-4, so the backward is right there."""
    model, x, y = gradsuite.conditioned_toy_point(seed=0)
    _, _, grads = model.loss_and_grads(x, y)
    name, idx = "stage2.block0.ctl.ioi.relate.weight", (1, 1, 5, 3)
    a = grads[name][idx]
    p = model.params[name]
    errs = {}
    for h in (1e-6, 1e-5, 1e-4, 1e-3):
        o = p[idx]
        p[idx] = o + h
        fp = float(ops.cross_entropy_vjp(model.forward(x), y)[0])
        p[idx] = o - h
        fm = float(ops.cross_entropy_vjp(model.forward(x), y)[0])
        p[idx] = o
        num = (fp - fm) / (2 * h)
        errs[h] = abs(num - a) / max(abs(a), abs(num), 1e-8)
    assert errs[1e-4] < 1e-5
    assert errs[1e-6] > errs[1e-5] > errs[1e-4] < errs[1e-3]
