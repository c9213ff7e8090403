"""Population and empirical losses, loss variations and lift utilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lift import Lift
from .model_zoo import Dataset, ModelFamily, Perturbation

MAX_DERIVATIVE_ORDER = 8

__all__ = [
    "Lift",
    "Dataset",
    "population_loss",
    "empirical_loss",
    "loss_variation",
    "empirical_loss_variation",
    "loss_variation_lift",
    "empirical_loss_variation_lift",
    "empirical_loss_lift",
    "lift_derivative",
    "check_rfv",
    "RfvReport",
]


def _checked_point(model: ModelFamily, w):
    w = np.asarray(w, dtype=float)
    if model.dim == 1 and w.shape[-1:] != (1,):
        w = w[..., None]
    if w.ndim == 0 or w.shape[-1] != model.dim:
        raise ValueError(f"expected points of dimension {model.dim}")
    lo, hi = model.lower, model.upper
    if np.any(w < lo) or np.any(w > hi):
        raise ValueError("parameter outside the model domain")
    return w


def population_loss(model: ModelFamily, w):
    """``K(w) = c_K w^(2k)``."""
    w = _checked_point(model, w)
    return model.loss_scale * np.prod(w ** (2 * np.array(model.k)), axis=-1)


def empirical_loss_lift(model: ModelFamily, data: Dataset) -> Lift:
    """``K_n`` as a deterministic polynomial in ``w``."""
    return model.f.empirical(data)


def empirical_loss(model: ModelFamily, data: Dataset, w):
    """``K_n(w) = (1/n) sum_i f(x_i, w)``."""
    w = _checked_point(model, w)
    return empirical_loss_lift(model, data).evaluate_w(w)


def loss_variation_lift(model: ModelFamily, xi: Perturbation) -> Lift:
    """``Delta K(w) = int xi f q dx`` by exact Gaussian moments."""
    return (xi.as_lift(model.dim) * model.f).population()


def empirical_loss_variation_lift(model: ModelFamily, xi: Perturbation, data: Dataset) -> Lift:
    """``Delta K_n(w) = (1/n) sum_j xi(x_j) f(x_j, w)``."""
    return (xi.as_lift(model.dim) * model.f).empirical(data)


def loss_variation(model: ModelFamily, xi: Perturbation, w):
    w = _checked_point(model, w)
    return loss_variation_lift(model, xi).evaluate_w(w)


def empirical_loss_variation(model: ModelFamily, xi: Perturbation, data: Dataset, w):
    w = _checked_point(model, w)
    return empirical_loss_variation_lift(model, xi, data).evaluate_w(w)


def lift_derivative(lift: Lift, beta, x, w, max_order: int = MAX_DERIVATIVE_ORDER):
    """Exact ``d^beta/dw^beta`` of ``lift`` evaluated at ``(x, w)``."""
    beta = tuple(int(b) for b in beta)
    if len(beta) != lift.dim or min(beta) < 0:
        raise ValueError(f"bad multi-index {beta}")
    if sum(beta) > max_order:
        raise ValueError(f"derivative order {sum(beta)} exceeds the cap {max_order}")
    return lift.derivative(beta).evaluate(x, w)


@dataclass(frozen=True)
class RfvReport:
    holds: bool
    c0_hat: float
    violations: np.ndarray  # grid points where E[psi] = 0 but E[psi^2] > 0


def check_rfv(lift: Lift, model: ModelFamily, grid, c0_max: float, tube: float = 1e-3) -> RfvReport:
    """Relatively-finite-variance check of ``lift`` on a grid of ``w``.

    Points within ``tube`` of the minimum locus of ``K`` are skipped.  At the
    remaining points ``E_q[psi^2] / |E_q[psi]|`` is computed in closed form
    and its maximum is reported as ``c0_hat``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None] if model.dim == 1 else grid[None, :]
    keep = model.K_zero_set_distance(grid) > tube
    pts = grid[keep]
    if pts.shape[0] == 0:
        raise ValueError("grid lies entirely inside the excluded tube")
    mean = lift.population().evaluate_w(pts)
    second = (lift * lift).population().evaluate_w(pts)
    scale = max(float(np.max(np.abs(second))), 1e-300)
    null = np.abs(mean) <= 1e-14 * max(scale, 1.0)
    bad = null & (second > 1e-14 * scale)
    if np.any(bad):
        return RfvReport(False, float("inf"), pts[bad])
    ok = ~null
    if not np.any(ok):
        # psi vanishes identically on the grid
        return RfvReport(True, 0.0, pts[:0])
    ratio = second[ok] / np.abs(mean[ok])
    c0 = float(np.max(ratio))
    return RfvReport(c0 <= c0_max, c0, pts[:0])
