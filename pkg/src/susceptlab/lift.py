"""Sparse polynomials in one data variable ``x`` and parameters ``w``.

Every lift, loss and loss variation in the model zoo is polynomial in both
``x`` and ``w``, so a single exact representation covers population moments
(Gaussian moments of ``x``), empirical averages (sample moments of ``x``) and
``w``-derivatives of any order.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np

Key = tuple[int, tuple[int, ...]]


def gaussian_moment(r: int) -> float:
    """E[x^r] for x ~ N(0, 1)."""
    if r % 2:
        return 0.0
    # (r-1)!!
    out = 1.0
    for j in range(r - 1, 0, -2):
        out *= j
    return out


class Lift:
    """Immutable polynomial ``sum_{r, e} c_{r,e} x^r w^e``.

    Parameters
    ----------
    dim : int
        Parameter dimension ``d``.
    terms : mapping
        ``{(x_power, w_exponents): coefficient}``.  Zero coefficients are
        dropped.
    """

    __slots__ = ("dim", "_terms", "_hash", "_compiled")

    def __init__(self, dim: int, terms: Mapping[Key, float] | Iterable = ()):
        self.dim = int(dim)
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[Key, float] = {}
        for (r, e), c in items:
            e = tuple(int(v) for v in e)
            if len(e) != self.dim:
                raise ValueError(f"exponent {e} does not match dimension {self.dim}")
            if r < 0 or min(e, default=0) < 0:
                raise ValueError("negative exponent")
            acc[(int(r), e)] = acc.get((int(r), e), 0.0) + float(c)
        self._terms = tuple(sorted((k, c) for k, c in acc.items() if c != 0.0))
        self._hash = None
        self._compiled = None

    # construction helpers

    @classmethod
    def constant(cls, dim: int, c: float = 1.0) -> "Lift":
        return cls(dim, {(0, (0,) * dim): c})

    @classmethod
    def monomial(cls, dim: int, w_exponents, x_power: int = 0, coef: float = 1.0) -> "Lift":
        return cls(dim, {(x_power, tuple(w_exponents)): coef})

    @classmethod
    def coordinate(cls, dim: int, i: int) -> "Lift":
        e = [0] * dim
        e[i] = 1
        return cls.monomial(dim, e)

    @classmethod
    def x_power(cls, dim: int, r: int = 1) -> "Lift":
        return cls.monomial(dim, (0,) * dim, x_power=r)

    @classmethod
    def x_polynomial(cls, dim: int, coefs) -> "Lift":
        """Lift ``sum_r coefs[r] x^r`` with no ``w`` dependence."""
        return cls(dim, {(r, (0,) * dim): c for r, c in enumerate(coefs)})

    # structure

    @property
    def terms(self) -> dict[Key, float]:
        return dict(self._terms)

    @property
    def max_x_degree(self) -> int:
        return max((r for (r, _), _ in self._terms), default=0)

    @property
    def is_deterministic(self) -> bool:
        return self.max_x_degree == 0

    @property
    def is_zero(self) -> bool:
        return not self._terms

    def min_w_exponent(self) -> tuple[int, ...]:
        """Componentwise minimal ``w``-exponent ``j`` so that lift = w^j * (...)."""
        if not self._terms:
            return (0,) * self.dim
        return tuple(min(e[i] for (_, e), _ in self._terms) for i in range(self.dim))

    def x_coefficients(self) -> dict[int, "Lift"]:
        """Split into ``{r: c_r(w)}`` with ``lift = sum_r c_r(w) x^r``."""
        out: dict[int, dict] = {}
        for (r, e), c in self._terms:
            out.setdefault(r, {})[(0, e)] = c
        return {r: Lift(self.dim, t) for r, t in out.items()}

    # algebra

    def __add__(self, other):
        if not isinstance(other, Lift):
            other = Lift.constant(self.dim, float(other))
        self._check_dim(other)
        acc = dict(self._terms)
        for k, c in other._terms:
            acc[k] = acc.get(k, 0.0) + c
        return Lift(self.dim, acc)

    __radd__ = __add__

    def __neg__(self):
        return Lift(self.dim, {k: -c for k, c in self._terms})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Lift) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Lift):
            s = float(other)
            return Lift(self.dim, {k: s * c for k, c in self._terms})
        self._check_dim(other)
        acc: dict[Key, float] = {}
        for (r1, e1), c1 in self._terms:
            for (r2, e2), c2 in other._terms:
                k = (r1 + r2, tuple(a + b for a, b in zip(e1, e2)))
                acc[k] = acc.get(k, 0.0) + c1 * c2
        return Lift(self.dim, acc)

    __rmul__ = __mul__

    def __pow__(self, p: int):
        out = Lift.constant(self.dim)
        for _ in range(int(p)):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, Lift) and self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dim, self._terms))
        return self._hash

    def __repr__(self):
        if not self._terms:
            return f"Lift(dim={self.dim}, 0)"
        parts = []
        for (r, e), c in self._terms:
            mono = "".join(f"*w{i}^{p}" for i, p in enumerate(e) if p)
            xs = f"*x^{r}" if r else ""
            parts.append(f"{c:g}{xs}{mono}")
        return f"Lift(dim={self.dim}, " + " + ".join(parts) + ")"

    def _check_dim(self, other: "Lift"):
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch {self.dim} vs {other.dim}")

    # calculus

    def deriv(self, i: int, order: int = 1) -> "Lift":
        """Exact partial derivative in ``w_i``."""
        acc = {}
        for (r, e), c in self._terms:
            p = e[i]
            if p < order:
                continue
            fac = math.perm(p, order)
            e2 = list(e)
            e2[i] = p - order
            acc[(r, tuple(e2))] = acc.get((r, tuple(e2)), 0.0) + c * fac
        return Lift(self.dim, acc)

    def derivative(self, beta) -> "Lift":
        out = self
        for i, b in enumerate(beta):
            if b:
                out = out.deriv(i, b)
        return out

    # x-reductions

    def reduce_x(self, moments) -> "Lift":
        """Replace ``x^r`` by ``moments[r]``; returns a deterministic lift."""
        acc: dict[Key, float] = {}
        for (r, e), c in self._terms:
            k = (0, e)
            acc[k] = acc.get(k, 0.0) + c * float(moments[r])
        return Lift(self.dim, acc)

    def population(self) -> "Lift":
        """``E_q[lift]`` for ``q = N(0, 1)``, exactly."""
        return self.reduce_x([gaussian_moment(r) for r in range(self.max_x_degree + 1)])

    def empirical(self, data) -> "Lift":
        """Dataset average ``(1/n) sum_j lift(x_j, w)``."""
        x = np.asarray(getattr(data, "points", data), dtype=float)
        if x.size == 0:
            raise ValueError("empty dataset")
        moments = [1.0] + [float(np.mean(x**r)) for r in range(1, self.max_x_degree + 1)]
        return self.reduce_x(moments)

    def at_x(self, x: float) -> "Lift":
        """Substitute a fixed data point."""
        return self.reduce_x([float(x) ** r for r in range(self.max_x_degree + 1)])

    def restrict(self, fixed: Mapping[int, float]) -> "Lift":
        """Substitute ``w_i = v`` for each fixed coordinate (dimension kept)."""
        acc: dict[Key, float] = {}
        for (r, e), c in self._terms:
            e2 = list(e)
            for i, v in fixed.items():
                c = c * float(v) ** e2[i]
                e2[i] = 0
            k = (r, tuple(e2))
            acc[k] = acc.get(k, 0.0) + c
        return Lift(self.dim, acc)

    # evaluation

    def _compile(self):
        if self._compiled is None:
            by_r: dict[int, tuple[list, list]] = {}
            for (r, e), c in self._terms:
                exps, coefs = by_r.setdefault(r, ([], []))
                exps.append(e)
                coefs.append(c)
            self._compiled = {
                r: (np.array(exps, dtype=np.int64).reshape(-1, self.dim), np.array(coefs))
                for r, (exps, coefs) in by_r.items()
            }
        return self._compiled

    @staticmethod
    def _poly_w(exps, coefs, w):
        if exps.shape[1] == 0:
            return np.full(w.shape[:-1], coefs.sum())
        # (..., T) products of powers
        mono = np.prod(w[..., None, :] ** exps, axis=-1)
        return mono @ coefs

    def evaluate(self, x, w):
        """Evaluate at data ``x`` and parameters ``w`` (trailing axis of size d)."""
        w = np.asarray(w, dtype=float)
        if w.shape[-1:] != (self.dim,):
            raise ValueError(f"w must have trailing dimension {self.dim}")
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape, w.shape[:-1])
        out = np.zeros(shape)
        for r, (exps, coefs) in self._compile().items():
            cw = self._poly_w(exps, coefs, w)
            out = out + (cw if r == 0 else cw * x**r)
        return out

    def evaluate_w(self, w):
        """Evaluate a deterministic lift at parameter points."""
        if not self.is_deterministic:
            raise ValueError("lift depends on x; reduce it first")
        return self.evaluate(0.0, w)

    __call__ = evaluate_w
