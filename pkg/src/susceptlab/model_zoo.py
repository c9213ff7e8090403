"""Singular model families in standard form.

All families share the Gaussian-location data model: the truth is
``q = N(0, 1)`` on the real line and the model is ``p(x | w) = N(mu(w), 1)``
with ``mu(w) = sqrt(2 c_K) * w^k``.  Then

    f(x, w) = mu(w)^2 / 2 - x mu(w),      K(w) = c_K * w^(2k),

so the loss is a monomial and every population integral is a Gaussian
moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e

from .lift import Lift, gaussian_moment

DATA_MODELS = ("gaussian_location",)


@dataclass(frozen=True)
class ModelFamily:
    """A model in standard form ``K(w) = c_K w^(2k)``, prior ``~ |w^h|`` on a box."""

    dim: int
    k: tuple[int, ...]
    h: tuple[int, ...]
    domain: tuple[tuple[float, float], ...]
    loss_scale: float = 0.5
    data_model: str = "gaussian_location"
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if len(self.k) != self.dim or len(self.h) != self.dim or len(self.domain) != self.dim:
            raise ValueError("k, h and domain must all have length dim")
        if any(ki < 1 for ki in self.k):
            raise ValueError(f"loss exponents must be >= 1, got k={self.k}")
        if any(hi < 0 for hi in self.h):
            raise ValueError(f"prior exponents must be >= 0, got h={self.h}")
        for lo, hi in self.domain:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError(f"empty or unbounded domain interval [{lo}, {hi}]")
        if not self.loss_scale > 0:
            raise ValueError("loss_scale must be positive")
        if self.data_model not in DATA_MODELS:
            raise ValueError(f"unknown data model {self.data_model!r}")

    @property
    def model_id(self) -> str:
        if self.name:
            return self.name
        ks = "".join(map(str, self.k))
        hs = "".join(map(str, self.h))
        return f"k{ks}_h{hs}"

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.domain])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.domain])

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, w, atol: float = 0.0) -> bool:
        w = np.asarray(w, dtype=float)
        return bool(np.all(w >= self.lower - atol) and np.all(w <= self.upper + atol))

    # polynomial pieces

    @property
    def mean_lift(self) -> Lift:
        """``mu(w) = sqrt(2 c_K) w^k``."""
        return Lift.monomial(self.dim, self.k, coef=math.sqrt(2.0 * self.loss_scale))

    @property
    def f(self) -> Lift:
        """Log density ratio ``f(x, w) = mu^2/2 - x mu``."""
        mu = self.mean_lift
        return 0.5 * mu * mu - Lift.x_power(self.dim) * mu

    @property
    def K(self) -> Lift:
        """Population loss ``c_K w^(2k)`` as a deterministic lift."""
        return Lift.monomial(self.dim, [2 * ki for ki in self.k], coef=self.loss_scale)

    # prior

    @property
    def log_prior_norm(self) -> float:
        """``log int_W |w^h| dw`` in closed form."""
        total = 0.0
        for (lo, hi), hi_exp in zip(self.domain, self.h):
            total += math.log(_abs_power_integral(lo, hi, hi_exp))
        return total

    def log_prior(self, w) -> np.ndarray:
        """Normalized log prior density at points ``w`` (trailing axis d)."""
        w = np.asarray(w, dtype=float)
        out = np.full(w.shape[:-1], -self.log_prior_norm)
        with np.errstate(divide="ignore"):
            for i, hi_exp in enumerate(self.h):
                if hi_exp:
                    out = out + hi_exp * np.log(np.abs(w[..., i]))
        return out

    def log_prior_derivative(self, i: int, order: int, value: float) -> float:
        """``d^order/dw_i^order log phi`` at ``w_i = value`` (separable prior)."""
        if order == 0:
            raise ValueError("order must be positive")
        hi_exp = self.h[i]
        if hi_exp == 0:
            return 0.0
        if value == 0.0:
            raise ValueError(f"log prior is singular at w_{i} = 0 (h_{i} = {hi_exp})")
        return hi_exp * (-1.0) ** (order - 1) * math.factorial(order - 1) / value**order

    def K_zero_set_distance(self, w) -> np.ndarray:
        """Distance from points to the minimum locus of K on W."""
        w = np.asarray(w, dtype=float)
        lo, hi = self.lower, self.upper
        if np.any((lo <= 0) & (hi >= 0)):
            crosses = (lo <= 0) & (hi >= 0)
            return np.min(np.abs(w[..., crosses]), axis=-1)
        # minimum of a monomial in |w| over a box avoiding zero: nearest corner
        corner = np.where(np.abs(lo) < np.abs(hi), lo, hi)
        return np.linalg.norm(w - corner, axis=-1)


def _abs_power_integral(lo: float, hi: float, p: int) -> float:
    """``int_lo^hi |w|^p dw``."""
    def prim(t):
        return math.copysign(abs(t) ** (p + 1) / (p + 1), t)

    return prim(hi) - prim(lo)


def make_monomial_gaussian(k, h=None, domain=None, loss_scale: float = 0.5, name: str = "") -> ModelFamily:
    """Build a Gaussian-location model with ``K(w) = loss_scale * w^(2k)``.

    ``domain`` defaults to the unit box and ``h`` to a uniform prior.
    """
    k = tuple(int(v) for v in np.atleast_1d(k))
    if any(v == 0 for v in k):
        raise ValueError("zero loss exponent: k must be >= 1 componentwise")
    d = len(k)
    h = (0,) * d if h is None else tuple(int(v) for v in np.atleast_1d(h))
    if domain is None:
        domain = ((0.0, 1.0),) * d
    domain = tuple((float(lo), float(hi)) for lo, hi in domain)
    return ModelFamily(dim=d, k=k, h=h, domain=domain, loss_scale=float(loss_scale), name=name)


@dataclass(frozen=True)
class Dataset:
    """i.i.d. draws from ``q``; read-only once created."""

    points: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.size

    def __len__(self):
        return self.points.size

    def moment(self, r: int) -> float:
        return float(np.mean(self.points**r))

    def __hash__(self):
        return hash((self.points.tobytes(), self.seed))

    def __eq__(self, other):
        return isinstance(other, Dataset) and np.array_equal(self.points, other.points)


def sample_data(model: ModelFamily, n: int, seed=None) -> Dataset:
    """Draw ``n`` points from the true distribution ``q = N(0, 1)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    int_seed = seed if isinstance(seed, (int, np.integer)) else None
    return Dataset(rng.standard_normal(n), seed=int_seed)


@dataclass(frozen=True)
class Perturbation:
    """Data perturbation ``xi = scale * He_m`` (probabilists' Hermite)."""

    index: int
    scale: float = 1.0

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("He_0 has nonzero mean under q; index must be >= 1")

    @property
    def xi_id(self) -> str:
        s = "" if self.scale == 1.0 else f"x{self.scale:g}"
        return f"He{self.index}{s}"

    @property
    def power_coefficients(self) -> np.ndarray:
        coefs = np.zeros(self.index + 1)
        coefs[self.index] = 1.0
        return self.scale * hermite_e.herme2poly(coefs)

    def as_lift(self, dim: int) -> Lift:
        return Lift.x_polynomial(dim, self.power_coefficients)

    def __call__(self, x):
        return perturbation_density(self, x)


def perturbation_density(xi: Perturbation, x):
    """``scale * He_m(x)``."""
    coefs = np.zeros(xi.index + 1)
    coefs[xi.index] = xi.scale
    return hermite_e.hermeval(x, coefs)


def hermite_pairing(xi: Perturbation, r: int) -> float:
    """``E_q[xi(x) x^r]`` exactly."""
    return float(sum(c * gaussian_moment(j + r) for j, c in enumerate(xi.power_coefficients)))
