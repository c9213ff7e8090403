"""Deterministic quadrature for full and restricted tempered posteriors.

Posterior densities ``exp(-n beta G) phi`` concentrate near the zero locus of
``K`` at rate ``(n beta)^(-1/2k)``.  Each free coordinate therefore gets a
composite Gauss-Legendre rule on panels graded geometrically toward the
point of its interval closest to zero, starting ``refine_depth`` dyadic
levels below the concentration scale.  Weights are formed in log space with
a max shift, so ``n beta`` up to 1e6 does not underflow.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lift import Lift
from .model_zoo import Dataset, ModelFamily

LOG_UNDERFLOW = math.log(np.finfo(float).tiny)
MAX_QUAD_DIM = 3


class PosteriorUnderflowError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Submanifold:
    """Axis-aligned slice ``{w_i = v_i for i in fixed}`` of the box ``W``."""

    fixed: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        items = self.fixed.items() if isinstance(self.fixed, dict) else self.fixed
        norm = tuple(sorted((int(i), float(v)) for i, v in items))
        if len({i for i, _ in norm}) != len(norm):
            raise ValueError("coordinate fixed twice")
        object.__setattr__(self, "fixed", norm)

    @classmethod
    def full(cls) -> "Submanifold":
        return cls(())

    @property
    def fixed_map(self) -> dict[int, float]:
        return dict(self.fixed)

    @property
    def is_full(self) -> bool:
        return not self.fixed

    def free_coords(self, dim: int) -> tuple[int, ...]:
        fixed = self.fixed_map
        return tuple(i for i in range(dim) if i not in fixed)

    def with_fixed(self, i: int, v: float) -> "Submanifold":
        m = self.fixed_map
        if i in m:
            raise ValueError(f"coordinate {i} already fixed")
        m[i] = v
        return Submanifold(tuple(m.items()))

    def validate(self, model: ModelFamily):
        for i, v in self.fixed:
            if not 0 <= i < model.dim:
                raise ValueError(f"fixed coordinate {i} out of range")
            lo, hi = model.domain[i]
            if not lo <= v <= hi:
                raise ValueError(f"fixed value w_{i} = {v} outside [{lo}, {hi}]")
        return self

    def embed(self, dim: int, free_points: np.ndarray) -> np.ndarray:
        """Insert fixed coordinates into points given on the free coordinates."""
        free = self.free_coords(dim)
        free_points = np.asarray(free_points, dtype=float)
        if free:
            free_points = free_points.reshape(-1, len(free))
        else:
            free_points = free_points.reshape(free_points.shape[0] if free_points.ndim > 1 else 1, 0)
        out = np.empty((free_points.shape[0], dim))
        for col, i in enumerate(free):
            out[:, i] = free_points[:, col]
        for i, v in self.fixed:
            out[:, i] = v
        return out

    @property
    def key(self) -> str:
        if not self.fixed:
            return "W"
        return ",".join(f"w{i}={v:g}" for i, v in self.fixed)

    def __str__(self):
        return self.key


FULL = Submanifold.full()


@dataclass(frozen=True)
class QuadratureConfig:
    """``nodes``: Gauss-Legendre order per panel; ``refine_depth``: dyadic
    levels below the concentration scale."""

    nodes: int = 16
    refine_depth: int = 6
    max_points: int = 4_000_000

    def doubled(self) -> "QuadratureConfig":
        return QuadratureConfig(2 * self.nodes, self.refine_depth + 1, self.max_points)


DEFAULT_QUAD = QuadratureConfig()


@functools.lru_cache(maxsize=64)
def _leggauss(order: int):
    return np.polynomial.legendre.leggauss(order)


def composite_rule(breaks, order: int):
    """Gauss-Legendre nodes and weights on consecutive panels."""
    x, wt = _leggauss(order)
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (b + a)
    weights = 0.5 * (b - a) * wt
    return nodes.ravel(), weights.ravel()


def graded_breaks(lo: float, hi: float, scale: float, depth: int, ratio: float = 2.0) -> np.ndarray:
    """Panel breakpoints on ``[lo, hi]`` graded toward the point nearest zero."""
    anchor = min(max(0.0, lo), hi)
    out = [anchor]
    for sign, end in ((1.0, hi), (-1.0, lo)):
        length = abs(end - anchor)
        if length == 0.0:
            continue
        s = min(scale, length)
        step = s * 2.0**-depth
        pts = []
        while step < length * (1 - 1e-12):
            pts.append(anchor + sign * step)
            step *= ratio
        pts.append(end)
        out.extend(pts)
    return np.unique(np.array(out))


def concentration_scales(model: ModelFamily, nbeta: float, support: Submanifold) -> dict[int, float]:
    """Tightest posterior width along each free coordinate of ``support``."""
    fixed = support.fixed_map
    reach = []
    for i, (lo, hi) in enumerate(model.domain):
        reach.append(abs(fixed[i]) if i in fixed else max(abs(lo), abs(hi)))
    scales = {}
    for i in support.free_coords(model.dim):
        lo, hi = model.domain[i]
        rest = np.prod([reach[j] ** (2 * model.k[j]) for j in range(model.dim) if j != i])
        strength = nbeta * model.loss_scale * rest
        scales[i] = strength ** (-1.0 / (2 * model.k[i])) if strength > 0 else hi - lo
    return scales


def _evaluate(integrand, points):
    vals = integrand(points)
    vals = np.asarray(vals, dtype=float)
    if vals.shape == ():
        vals = np.full(points.shape[0], float(vals))
    return vals


class QuadraturePosterior:
    """Tensor Gauss-Legendre representation of ``exp(-nbeta G) phi`` on a support.

    Holds normalized weights, so ``expect`` is a weighted sum, and the log
    partition function ``log Z`` of the (prior-normalized) density.
    """

    def __init__(self, model: ModelFamily, loss: Lift, nbeta: float, support: Submanifold = FULL,
                 config: QuadratureConfig = DEFAULT_QUAD):
        support.validate(model)
        if nbeta < 0:
            raise ValueError("n beta must be nonnegative")
        self.model, self.loss, self.nbeta, self.support, self.config = model, loss, float(nbeta), support, config
        free = support.free_coords(model.dim)
        if len(free) > MAX_QUAD_DIM:
            raise ValueError(f"quadrature supports at most {MAX_QUAD_DIM} free dimensions; use the sgld backend")
        scales = concentration_scales(model, nbeta, support)
        rules = []
        for i in free:
            lo, hi = model.domain[i]
            ratio = 2.0 ** (1.0 / model.k[i])
            breaks = graded_breaks(lo, hi, scales[i], config.refine_depth, ratio)
            rules.append(composite_rule(breaks, config.nodes))
        npts = int(np.prod([len(r[0]) for r in rules])) if rules else 1
        if npts > config.max_points:
            raise ValueError(f"quadrature grid of {npts} points exceeds max_points={config.max_points}; "
                             "lower quad.nodes / quad.refine_depth or use the sgld backend")
        if rules:
            grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
            wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
            free_pts = np.stack([g.ravel() for g in grids], axis=-1)
            logq = np.sum([np.log(g.ravel()) for g in wgrids], axis=0)
        else:
            free_pts = np.zeros((1, 0))
            logq = np.zeros(1)
        self.points = support.embed(model.dim, free_pts)
        logw = logq - self.nbeta * loss.evaluate_w(self.points) + model.log_prior(self.points)
        m = np.max(logw)
        if not np.isfinite(m):
            raise PosteriorUnderflowError("posterior mass underflow; increase resolution or reduce nβ")
        p = np.exp(logw - m)
        s = np.sum(p)
        self.weights = p / s
        self.log_z = float(m + math.log(s))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def partition_function(self) -> float:
        if self.log_z < LOG_UNDERFLOW:
            raise PosteriorUnderflowError("posterior mass underflow; increase resolution or reduce nβ")
        return math.exp(self.log_z)

    def values(self, integrand) -> np.ndarray:
        return _evaluate(integrand, self.points)

    def expect(self, integrand) -> float:
        return float(np.sum(self.weights * _evaluate(integrand, self.points)))

    def mean_se(self, integrand) -> tuple[float, float]:
        return self.expect(integrand), 0.0


@functools.lru_cache(maxsize=48)
def _cached_posterior(model, loss, nbeta, support, config):
    return QuadraturePosterior(model, loss, nbeta, support, config)


class QuadratureBackend:
    """Posterior provider backed by deterministic quadrature.

    ``loss`` is ``K`` (population mode) or ``K_n`` (empirical mode).
    """

    kind = "quadrature"
    exact = True

    def __init__(self, model: ModelFamily, loss: Lift, nbeta: float, config: QuadratureConfig = DEFAULT_QUAD,
                 mode: str = "population"):
        self.model, self.loss, self.nbeta, self.config, self.mode = model, loss, float(nbeta), config, mode

    @classmethod
    def population(cls, model: ModelFamily, nbeta: float, config: QuadratureConfig = DEFAULT_QUAD):
        return cls(model, model.K, nbeta, config, mode="population")

    @classmethod
    def empirical(cls, model: ModelFamily, data: Dataset, nbeta: float, config: QuadratureConfig = DEFAULT_QUAD):
        return cls(model, model.f.empirical(data), nbeta, config, mode="empirical")

    def posterior(self, support: Submanifold = FULL, center=None) -> QuadraturePosterior:
        return _cached_posterior(self.model, self.loss, self.nbeta, support, self.config)

    def expect(self, integrand, support: Submanifold = FULL) -> float:
        return self.posterior(support).expect(integrand)

    def log_partition(self, support: Submanifold = FULL) -> float:
        return self.posterior(support).log_z


@dataclass(frozen=True)
class TemperedPosteriorSpec:
    """Tempered posterior ``exp(-n beta G) phi`` with ``G = K`` or ``K_n``."""

    model: ModelFamily
    n: int
    beta: float
    mode: str = "population"
    data: Dataset | None = None
    support: Submanifold = field(default=FULL)

    def __post_init__(self):
        if self.n < 1 or self.beta < 0:
            raise ValueError("need n >= 1 and beta >= 0")
        if self.mode not in ("population", "empirical"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "empirical":
            if self.data is None or len(self.data) != self.n:
                raise ValueError("empirical mode requires a dataset of size n")
        self.support.validate(self.model)

    @property
    def nbeta(self) -> float:
        return self.n * self.beta

    @property
    def loss(self) -> Lift:
        return self.model.K if self.mode == "population" else self.model.f.empirical(self.data)

    def backend(self, config: QuadratureConfig = DEFAULT_QUAD) -> QuadratureBackend:
        return QuadratureBackend(self.model, self.loss, self.nbeta, config, self.mode)

    def with_support(self, support: Submanifold) -> "TemperedPosteriorSpec":
        return TemperedPosteriorSpec(self.model, self.n, self.beta, self.mode, self.data, support)


def expect(spec: TemperedPosteriorSpec, integrand: Callable, config: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Posterior expectation of ``integrand(points)`` over ``spec.support``."""
    return spec.backend(config).expect(integrand, spec.support)


def log_partition_function(spec: TemperedPosteriorSpec, config: QuadratureConfig = DEFAULT_QUAD) -> float:
    return spec.backend(config).log_partition(spec.support)


def partition_function(spec: TemperedPosteriorSpec, config: QuadratureConfig = DEFAULT_QUAD) -> float:
    """``Z = int_S exp(-n beta G) phi``, with ``phi`` normalized on ``W``."""
    return spec.backend(config).posterior(spec.support).partition_function


# sublevel sets


def _level_bound(model: ModelFamily, eps: float, coefficient) -> np.ndarray:
    """Half-width ``b`` with ``c_K * coefficient * |w|^(2k) <= eps`` iff ``|w| <= b``."""
    coefficient = np.asarray(coefficient, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(coefficient > 0, (eps / (model.loss_scale * coefficient)), np.inf)


def level_set_rule(model: ModelFamily, eps: float, support: Submanifold = FULL,
                   config: QuadratureConfig = DEFAULT_QUAD) -> tuple[np.ndarray, np.ndarray]:
    """Points and normalized weights of the uniform law on ``{K|_S <= eps}``.

    The innermost free coordinate is integrated exactly over its slice of the
    sublevel set; the outer coordinates carry breakpoints where that slice
    changes shape.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    support.validate(model)
    free = support.free_coords(model.dim)
    fixed = support.fixed_map
    fixed_factor = np.prod([abs(v) ** (2 * model.k[i]) for i, v in fixed.items()]) if fixed else 1.0
    if not free:
        pt = support.embed(model.dim, np.zeros((1, 0)))
        if model.loss_scale * fixed_factor > eps:
            raise ValueError("empty sublevel set")
        return pt, np.ones(1)
    inner, outer = free[-1], free[:-1]
    lo_in, hi_in = model.domain[inner]
    k_in = model.k[inner]
    # |w_inner| cap where the inner slice stops being the whole interval / empties
    far_in = max(abs(lo_in), abs(hi_in))
    near_in = 0.0 if lo_in <= 0 <= hi_in else min(abs(lo_in), abs(hi_in))
    rules = []
    for i in outer:
        lo, hi = model.domain[i]
        far_other = np.prod([max(abs(a), abs(b)) ** (2 * model.k[j])
                             for j, (a, b) in enumerate(model.domain) if j not in fixed and j not in (i, inner)])
        kinks = []
        for edge in (far_in, near_in):
            if edge > 0:
                denom = model.loss_scale * fixed_factor * far_other * edge ** (2 * k_in)
                kinks.append((eps / denom) ** (1.0 / (2 * model.k[i])))
        scale = min(kinks) if kinks else hi - lo
        breaks = graded_breaks(lo, hi, scale, config.refine_depth, 2.0 ** (1.0 / model.k[i]))
        breaks = np.unique(np.concatenate([breaks, [c for c in kinks if lo < c < hi],
                                           [-c for c in kinks if lo < -c < hi]]))
        rules.append(composite_rule(breaks, config.nodes))
    if rules:
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
        outer_pts = np.stack([g.ravel() for g in grids], axis=-1)
        outer_w = np.prod([g.ravel() for g in wgrids], axis=0)
    else:
        outer_pts = np.zeros((1, 0))
        outer_w = np.ones(1)
    coef = fixed_factor * np.prod([np.abs(outer_pts[:, c]) ** (2 * model.k[i]) for c, i in enumerate(outer)], axis=0) \
        if outer else np.full(1, fixed_factor)
    bound = _level_bound(model, eps, coef) ** (1.0 / (2 * k_in))
    a = np.maximum(lo_in, -bound)
    b = np.minimum(hi_in, bound)
    length = np.clip(b - a, 0.0, None)
    if not np.any(length > 0):
        raise ValueError("empty sublevel set")
    x, wt = _leggauss(config.nodes)
    inner_nodes = 0.5 * length[:, None] * x + 0.5 * (a + b)[:, None]
    inner_w = 0.5 * length[:, None] * wt
    n_out = outer_pts.shape[0]
    free_pts = np.empty((n_out * config.nodes, len(free)))
    free_pts[:, :-1] = np.repeat(outer_pts, config.nodes, axis=0)
    free_pts[:, -1] = inner_nodes.ravel()
    weights = (outer_w[:, None] * inner_w).ravel()
    keep = weights > 0
    weights = weights[keep]
    return support.embed(model.dim, free_pts[keep]), weights / np.sum(weights)


def level_set_expect(model: ModelFamily, eps: float, support: Submanifold, integrand,
                     config: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Expectation under the uniform distribution on ``{w in S : K|_S(w) <= eps}``."""
    pts, wts = level_set_rule(model, eps, support, config)
    return float(np.sum(wts * _evaluate(integrand, pts)))
