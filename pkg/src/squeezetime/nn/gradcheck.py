"""Central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .ops import record_kinks


class GradCheckError(ArithmeticError):
    pass


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst: tuple[str, tuple[int, ...]] | None
    checked: int
    skipped_kinks: int = 0
    per_tensor: dict[str, float] = field(default_factory=dict)
    max_abs_error: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_relative_error < tol


def relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(
    loss_fn: Callable[[Mapping[str, np.ndarray]], float],
    point: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    *,
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    skip_kinks: bool = True,
) -> GradCheckResult:
    """Compare ``analytic`` gradients with central differences of ``loss_fn``.

    ``point`` maps names to float64 arrays which are perturbed in place (and
    restored). With ``max_coords`` set, at most that many coordinates per
    tensor are drawn at random; otherwise every coordinate is checked.
    When ``skip_kinks`` is on, coordinates whose +/- perturbations flip a
    relu mask or a max-pool argmax are skipped and counted, since the
    function is not differentiable there at the probe resolution.
    """
    rng = np.random.default_rng(seed)
    with record_kinks() as base_log:
        loss_fn(point)
    worst_err, worst, worst_abs = 0.0, None, 0.0
    checked = skipped = 0
    per_tensor = {}
    for name, x in point.items():
        if x.dtype != np.float64:
            raise GradCheckError(f"{name}: gradient checks run in float64, got {x.dtype}")
        g = analytic[name]
        if g.shape != x.shape:
            raise GradCheckError(f"{name}: analytic grad shape {g.shape} != {x.shape}")
        flat = x.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        else:
            coords = np.arange(flat.size)
        tensor_err = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            with record_kinks() as log_plus:
                f_plus = float(loss_fn(point))
            flat[c] = orig - step
            with record_kinks() as log_minus:
                f_minus = float(loss_fn(point))
            flat[c] = orig
            idx = tuple(int(i) for i in np.unravel_index(c, x.shape))
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"non-finite loss at {name}{idx}")
            if skip_kinks and not (_same(log_plus, base_log) and _same(log_minus, base_log)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * step)
            a = g.reshape(-1)[c]
            err = float(relative_error(a, numeric))
            worst_abs = max(worst_abs, abs(float(a) - numeric))
            checked += 1
            tensor_err = max(tensor_err, err)
            if err > worst_err:
                worst_err, worst = err, (name, idx)
        per_tensor[name] = tensor_err
    return GradCheckResult(worst_err, worst, checked, skipped, per_tensor, worst_abs)


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
