"""Functional and differential observables and restricted covariances.

An observable is a finite sum of terms ``d^beta d_v^t (g delta_S)`` where
``S`` is an axis-aligned slice of the box, ``beta`` differentiates in the
fixed (normal) coordinates and ``t`` in the free (tangential) ones.  Pairing
against a density ``F`` follows the distributional convention

    <d^alpha (g delta_S), F> = (-1)^|alpha| int_S g d^alpha F.

Tangential derivatives are moved onto ``g`` by integration by parts; normal
derivatives of ``F = exp(-n beta G) phi`` are expanded by the Leibniz rule.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .lift import Lift
from .model_zoo import Dataset, ModelFamily
from .posterior import FULL, Submanifold

MAX_NORMAL_ORDER = 4


@dataclass(frozen=True)
class ObservableTerm:
    """One summand ``d^beta d^tangential (lift * delta_support)``.

    ``beta`` and ``tangential`` are full-length multi-indices; ``beta`` may
    only be nonzero on fixed coordinates and ``tangential`` only on free ones.
    ``order`` is the normalization order ``M``; it defaults to the total
    derivative order and is kept when tangential derivatives are reduced.
    ``center`` is the chart center used to localize SGLD chains.
    """

    lift: Lift
    support: Submanifold = FULL
    beta: tuple[int, ...] = ()
    tangential: tuple[int, ...] = ()
    order: int | None = None
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        d = self.lift.dim
        beta = tuple(int(b) for b in self.beta) or (0,) * d
        tang = tuple(int(t) for t in self.tangential) or (0,) * d
        if len(beta) != d or len(tang) != d or min(beta + tang) < 0:
            raise ValueError("beta and tangential must be nonnegative multi-indices of length dim")
        fixed = self.support.fixed_map
        for i in range(d):
            if beta[i] and i not in fixed:
                raise ValueError(f"normal derivative in free coordinate {i}")
            if tang[i] and i in fixed:
                raise ValueError(f"tangential derivative in fixed coordinate {i}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "tangential", tang)
        total = sum(beta) + sum(tang)
        order = total if self.order is None else int(self.order)
        if order < total:
            raise ValueError("normalization order below the derivative order")
        object.__setattr__(self, "order", order)
        if self.center is not None:
            c = tuple(float(v) for v in self.center)
            if len(c) != d:
                raise ValueError("center must have length dim")
            for i, v in fixed.items():
                if c[i] != v:
                    raise ValueError("center must lie on the support")
            object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.lift.dim

    @property
    def normal_order(self) -> int:
        return sum(self.beta)

    @property
    def is_functional(self) -> bool:
        return self.order == 0

    def with_lift(self, lift: Lift) -> "ObservableTerm":
        return replace(self, lift=lift)


@dataclass(frozen=True)
class Observable:
    terms: tuple[ObservableTerm, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("observable needs at least one term")
        if len({t.dim for t in terms}) != 1:
            raise ValueError("terms of different dimension")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def functional(cls, lift: Lift, support: Submanifold = FULL, name: str = "") -> "Observable":
        return cls((ObservableTerm(lift, support),), name)

    @property
    def dim(self) -> int:
        return self.terms[0].dim

    @property
    def order(self) -> int:
        return max(t.order for t in self.terms)

    @property
    def is_functional(self) -> bool:
        return self.order == 0

    @property
    def is_deterministic(self) -> bool:
        return all(t.lift.is_deterministic for t in self.terms)

    @property
    def obs_id(self) -> str:
        return self.name or f"obs{abs(hash(self.terms)) % 10**8:08d}"

    def __add__(self, other: "Observable") -> "Observable":
        return Observable(self.terms + other.terms, self.name)

    def map_lifts(self, fn: Callable[[Lift], Lift]) -> "Observable":
        return Observable(tuple(t.with_lift(fn(t.lift)) for t in self.terms), self.name)

    def reduced(self, model: ModelFamily | None = None) -> "Observable":
        out = []
        for t in self.terms:
            out.extend(reduce_tangential(t, model))
        return Observable(tuple(out), self.name)


def population_observable(obs: Observable) -> Observable:
    """Replace each lift by its ``q``-expectation."""
    return obs.map_lifts(Lift.population)


def empirical_observable(obs: Observable, data: Dataset) -> Observable:
    """Replace each lift by its dataset average; deterministic lifts are unchanged."""
    return obs.map_lifts(lambda g: g if g.is_deterministic else g.empirical(data))


# tangential reduction


def reduce_tangential(term: ObservableTerm, model: ModelFamily | None = None) -> list[ObservableTerm]:
    """Integrate tangential derivatives by parts until only normal ones remain.

    One step on ``d_v`` (free coordinate ``j`` with interval ``[lo, hi]``)
    gives a bulk term with lift ``d_j g`` on ``S`` plus face terms ``+g`` on
    ``{w_j = lo}`` and ``-g`` on ``{w_j = hi}``.  Remaining derivatives in
    ``j`` become normal derivatives on the faces.  The box is taken from
    ``model`` (unit box when omitted).
    """
    if not any(term.tangential):
        return [term]
    d = term.dim
    j = next(i for i, t in enumerate(term.tangential) if t)
    rest = list(term.tangential)
    rest[j] -= 1
    lo, hi = model.domain[j] if model is not None else (0.0, 1.0)
    out: list[ObservableTerm] = []
    bulk_lift = term.lift.deriv(j)
    if not bulk_lift.is_zero:
        out.extend(reduce_tangential(
            ObservableTerm(bulk_lift, term.support, term.beta, tuple(rest), term.order, term.center), model))
    face_beta = list(term.beta)
    face_beta[j] = rest[j]
    face_tang = list(rest)
    face_tang[j] = 0
    for value, sign in ((lo, 1.0), (hi, -1.0)):
        if model is not None and model.h[j] > 0 and value == 0.0 and face_beta[j] < model.h[j]:
            # the prior and its first h_j - 1 normal derivatives vanish on this face
            continue
        face = term.support.with_fixed(j, value)
        center = None
        if term.center is not None:
            c = list(term.center)
            c[j] = value
            center = tuple(c)
        out.extend(reduce_tangential(
            ObservableTerm(sign * term.lift, face, tuple(face_beta), tuple(face_tang), term.order, center), model))
    return out


# Leibniz expansion

Factor = tuple[str, tuple[int, ...]]  # ("G" or "L", multi-index)
Monomial = tuple[tuple[Factor, int], ...]


def _mono_mul(mono: Monomial, factor: Factor) -> Monomial:
    acc = dict(mono)
    acc[factor] = acc.get(factor, 0) + 1
    return tuple(sorted(acc.items()))


def _bump(gamma: tuple[int, ...], u: int) -> tuple[int, ...]:
    g = list(gamma)
    g[u] += 1
    return tuple(g)


@dataclass(frozen=True)
class LeibnizExpansion:
    """``d^beta F / F = sum_j (-nbeta)^(r_j) Q_j`` grouped by ``r``.

    ``terms[r]`` maps monomials in derivatives of ``G`` and ``L = log phi``
    to integer coefficients.
    """

    beta: tuple[int, ...]
    terms: dict[int, dict[Monomial, int]]

    @property
    def ranks(self) -> list[int]:
        return sorted(self.terms)

    @property
    def max_rank(self) -> int:
        return max(self.terms)

    def coefficients(self, g_deriv: Callable, l_deriv: Callable) -> dict[int, np.ndarray | float]:
        """Evaluate each ``Q_r``.  ``g_deriv(gamma)`` and ``l_deriv(gamma)``
        return normal derivatives of ``G`` and ``log phi`` on the support."""
        cache: dict[Factor, object] = {}

        def value(f: Factor):
            if f not in cache:
                cache[f] = g_deriv(f[1]) if f[0] == "G" else l_deriv(f[1])
            return cache[f]

        out = {}
        for r, poly in self.terms.items():
            total = 0.0
            for mono, c in poly.items():
                v = float(c)
                for f, p in mono:
                    v = v * value(f) ** p
                total = total + v
            out[r] = total
        return out

    def evaluate(self, g_deriv: Callable, l_deriv: Callable, nbeta: float, practice: bool = False):
        """``sum_j (-nbeta)^(r_j) Q_j``; ``practice`` keeps only ``r = |beta|``."""
        q = self.coefficients(g_deriv, l_deriv)
        top = sum(self.beta)
        return sum((-nbeta) ** r * v for r, v in q.items() if not practice or r == top)


@functools.lru_cache(maxsize=None)
def _expand(beta: tuple[int, ...]) -> dict[Monomial, int]:
    if not any(beta):
        return {(): 1}
    u = max(i for i, b in enumerate(beta) if b)
    prev = list(beta)
    prev[u] -= 1
    poly = _expand(tuple(prev))
    out: dict[Monomial, int] = {}

    def add(m, c):
        out[m] = out.get(m, 0) + c

    for mono, c in poly.items():
        for (kind, gamma), p in mono:
            acc = dict(mono)
            acc[(kind, gamma)] -= 1
            if not acc[(kind, gamma)]:
                del acc[(kind, gamma)]
            new = (kind, _bump(gamma, u))
            acc[new] = acc.get(new, 0) + 1
            add(tuple(sorted(acc.items())), c * p)
        unit = tuple(int(i == u) for i in range(len(beta)))
        add(_mono_mul(mono, ("G", unit)), c)
        add(_mono_mul(mono, ("L", unit)), c)
    return {m: c for m, c in out.items() if c}


def leibniz_expand(beta: Sequence[int], max_order: int = MAX_NORMAL_ORDER) -> LeibnizExpansion:
    """Symbolic expansion of ``d^beta exp(-nbeta G + log phi)``, cached per ``beta``."""
    beta = tuple(int(b) for b in beta)
    if min(beta, default=0) < 0:
        raise ValueError("negative multi-index")
    if sum(beta) > max_order:
        raise ValueError(f"normal order {sum(beta)} exceeds the cap {max_order}")
    grouped: dict[int, dict[Monomial, int]] = {}
    for mono, c in _expand(beta).items():
        r = sum(p for (kind, _), p in mono if kind == "G")
        grouped.setdefault(r, {})[mono] = c
    return LeibnizExpansion(beta, grouped)


def derivative_sources(model: ModelFamily, loss: Lift, points: np.ndarray):
    """Callbacks giving normal derivatives of ``G`` and ``log phi`` at ``points``."""

    def g_deriv(gamma):
        return loss.derivative(gamma).evaluate_w(points)

    def l_deriv(gamma):
        nz = [(i, m) for i, m in enumerate(gamma) if m]
        if len(nz) != 1:
            return 0.0  # separable prior: mixed partials vanish
        i, m = nz[0]
        vals = np.unique(points[:, i])
        if vals.size != 1:
            raise ValueError("log prior derivatives requested along a free coordinate")
        return model.log_prior_derivative(i, m, float(vals[0]))

    return g_deriv, l_deriv


def leibniz_factor(term: ObservableTerm, model: ModelFamily, loss: Lift, nbeta: float, points: np.ndarray,
                   practice: bool = False, by_rank: bool = False):
    """``(-1)^|beta| sum_j (-nbeta)^(r_j) Q_j`` at ``points`` of the term's support.

    With ``by_rank`` the unsummed ``{r: (-1)^|beta| (-nbeta)^r Q_r}`` is returned.
    """
    exp = leibniz_expand(term.beta)
    sign = (-1.0) ** term.normal_order
    if not any(term.beta):
        return {0: sign} if by_rank else sign
    g_deriv, l_deriv = derivative_sources(model, loss, points)
    if by_rank:
        q = exp.coefficients(g_deriv, l_deriv)
        return {r: sign * (-nbeta) ** r * v for r, v in q.items()}
    return sign * exp.evaluate(g_deriv, l_deriv, nbeta, practice)


def pairing(term: ObservableTerm, backend) -> float:
    """Unnormalized pairing ``<d^beta (g delta_S), exp(-nbeta G) phi>``.

    Needs a backend that exposes partition functions (quadrature).
    """
    if any(term.tangential):
        raise ValueError("reduce tangential derivatives first")
    post = backend.posterior(term.support)
    vals = term.lift.evaluate_w(post.points) * leibniz_factor(term, backend.model, backend.loss, backend.nbeta,
                                                              post.points)
    return math.exp(post.log_z) * float(np.sum(post.weights * vals))


# restricted covariance


class CancellationError(ArithmeticError):
    pass


@dataclass
class CovariancePiece:
    """One summand ``E_S[a b] - E_S[a] E_W[b_W]`` on a single support."""

    term: ObservableTerm
    posterior: object
    a: np.ndarray
    b: np.ndarray

    def mean_a(self) -> float:
        return float(np.sum(self.posterior.weights * self.a))

    def mean_ab(self) -> float:
        return float(np.sum(self.posterior.weights * self.a * self.b))

    def mean_b(self) -> float:
        return float(np.sum(self.posterior.weights * self.b))


@dataclass
class CovarianceBreakdown:
    pieces: list[CovariancePiece]
    full: object
    b_full: np.ndarray

    @property
    def mean_b_full(self) -> float:
        return float(np.sum(self.full.weights * self.b_full))

    def summands(self, check: bool = True) -> list[float]:
        eb = self.mean_b_full
        out = []
        for p in self.pieces:
            ea = p.mean_a()
            direct = p.mean_ab() - ea * eb
            if check:
                w = p.posterior.weights
                centered = float(np.sum(w * (p.a - ea) * (p.b - eb))) + ea * (p.mean_b() - eb)
                scale = math.sqrt(float(np.sum(w * p.a**2)) * float(np.sum(w * p.b**2))) + abs(ea * eb)
                if abs(direct - centered) > 1e-8 * max(scale, 1e-300):
                    raise CancellationError(f"covariance cancellation on {p.term.support}: "
                                            f"{direct!r} vs {centered!r}")
            out.append(direct)
        return out

    def total(self, check: bool = True) -> float:
        return float(sum(self.summands(check)))


def _as_lift(delta_k, dim: int):
    if isinstance(delta_k, Lift):
        if not delta_k.is_deterministic:
            raise ValueError("loss variation must be deterministic in x")
        return delta_k.evaluate_w
    return delta_k


def covariance_breakdown(obs: Observable, delta_k, backend, practice: bool = False) -> CovarianceBreakdown:
    """Evaluate every ingredient of the restricted covariance on the backend."""
    model = backend.model
    obs = obs.reduced(model)
    if not obs.is_deterministic:
        raise ValueError("observable lifts depend on x; apply population_observable or empirical_observable")
    dk = _as_lift(delta_k, obs.dim)
    full = backend.posterior(FULL)
    pieces = []
    for t in obs.terms:
        post = backend.posterior(t.support, t.center)
        pts = post.points
        a = t.lift.evaluate_w(pts) * leibniz_factor(t, model, backend.loss, backend.nbeta, pts, practice)
        if t.order:
            a = a / backend.nbeta**t.order
        a = np.broadcast_to(np.asarray(a, dtype=float), (pts.shape[0],))
        pieces.append(CovariancePiece(t, post, a, np.asarray(dk(pts), dtype=float)))
    return CovarianceBreakdown(pieces, full, np.asarray(dk(full.points), dtype=float))


def restricted_covariance(obs: Observable, delta_k, backend, practice: bool = False, check: bool = True) -> float:
    """``sum_i [E_{S_i}(g_i dK) - E_{S_i}(g_i) E_W(dK)]`` with Leibniz weights.

    Differential terms of order ``M`` and Leibniz rank ``r`` carry the
    prefactor ``(-1)^|beta| (-nbeta)^r (nbeta)^-M``.  ``delta_k`` is a
    deterministic lift or a vectorized function of ``w``.
    """
    return covariance_breakdown(obs, delta_k, backend, practice).total(check)
