"""Moment-scaling laws, log-log fits and the fluctuation function."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import integrate, special, stats

SCALING_COLUMNS = ("k", "h", "l", "lambda_l", "tau", "m_l", "slope_hat", "C_hat", "C_theory", "r2")


def _lambda(k, h, l) -> tuple[Fraction, int]:
    vals = [Fraction(li + hi + 1, 2 * ki) for ki, hi, li in zip(k, h, l)]
    best = min(vals)
    return best, sum(v == best for v in vals)


@dataclass(frozen=True)
class ScalingLaw:
    """``E[w^l] ~ C (n beta)^-tau (log n beta)^(m_l - m)`` with ``tau = lambda_l - lambda``."""

    k: tuple[int, ...]
    h: tuple[int, ...]
    l: tuple[int, ...]
    lambda_l: Fraction
    m_l: int
    rlct: Fraction
    m: int
    C: float | None = None

    @property
    def tau(self) -> Fraction:
        return self.lambda_l - self.rlct

    @property
    def log_power(self) -> int:
        return self.m_l - self.m

    def predict(self, nbeta):
        if self.C is None:
            raise ValueError("no closed-form constant for this law")
        nbeta = np.asarray(nbeta, dtype=float)
        return self.C * nbeta ** (-float(self.tau)) * np.log(nbeta) ** self.log_power


def scaling_law(k, h, l, loss_scale: float = 1.0) -> ScalingLaw:
    """Exact exponents for the monomial insertion ``w^l``.

    In one dimension the constant is ``c^-tau Gamma(lambda_l) / Gamma(lambda)``
    for ``K = c w^(2k)``, from the substitution ``t = n beta c w^(2k)``.
    """
    k, h, l = (tuple(int(v) for v in np.atleast_1d(a)) for a in (k, h, l))
    if not len(k) == len(h) == len(l):
        raise ValueError("k, h, l must have equal length")
    if min(k) < 1 or min(h) < 0 or min(l) < 0:
        raise ValueError("need k >= 1, h >= 0, l >= 0")
    lam_l, m_l = _lambda(k, h, l)
    lam, m = _lambda(k, h, (0,) * len(k))
    C = None
    if len(k) == 1:
        tau = float(lam_l - lam)
        C = loss_scale ** (-tau) * math.exp(special.gammaln(float(lam_l)) - special.gammaln(float(lam)))
    return ScalingLaw(k, h, l, lam_l, m_l, lam, m, C)


@dataclass(frozen=True)
class ScalingFit:
    slope_hat: float
    C_hat: float
    r2: float


def fit_scaling(values, law: ScalingLaw | None = None) -> ScalingFit:
    """Least-squares line through ``(log nbeta, log moment - (m_l - m) log log nbeta)``."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("values must be (nbeta, moment) pairs")
    nb, mom = arr[:, 0], arr[:, 1]
    if np.any(mom <= 0):
        raise ValueError("moments must be strictly positive")
    if len(nb) < 5 or math.log10(nb.max() / nb.min()) < 3 - 1e-12:
        raise ValueError("need at least 5 points spanning 3 decades of n beta")
    y = np.log(mom)
    if law is not None and law.log_power:
        y = y - law.log_power * np.log(np.log(nb))
    x = np.log(nb)
    if np.ptp(y) == 0.0:
        return ScalingFit(0.0, float(mom[0]), 1.0)
    fit = stats.linregress(x, y)
    return ScalingFit(float(fit.slope), float(math.exp(fit.intercept)), float(fit.rvalue**2))


def fluctuation_function(alpha: float, a: float, beta: float, full_output: bool = False):
    """``S_alpha(a) = int_0^inf t^(alpha-1) exp(-t + a sqrt(beta t)) dt``.

    After ``t = s^2`` the integrand is ``2 s^(2 alpha - 1) exp(-s^2 + b s)``
    with ``b = a sqrt(beta)``; the algebraic endpoint factor is handled by
    the weighted rule and the tail beyond the cutoff is integrated separately
    as the truncation error estimate.  With ``full_output`` returns
    ``(value, abserr, converged)``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    b = a * math.sqrt(beta)
    cut = max(b, 0.0) + 12.0

    def g(s):
        return 2.0 * math.exp(-s * s + b * s)

    body, err = integrate.quad(g, 0.0, cut, weight="alg", wvar=(2 * alpha - 1, 0.0), epsabs=1e-14, epsrel=1e-13,
                               limit=200)
    tail, tail_err = integrate.quad(lambda s: 2.0 * s ** (2 * alpha - 1) * math.exp(-s * s + b * s), cut, np.inf)
    value = body + tail
    abserr = err + tail_err
    converged = tail <= 1e-10 and abserr <= 1e-10 * max(1.0, abs(value))
    return (value, abserr, converged) if full_output else value


def fluctuation_expansion(alpha: float, a: float, beta: float) -> float:
    """``Gamma(alpha) (1 + a sqrt(beta) k_alpha)`` with ``k_alpha = Gamma(alpha + 1/2) / Gamma(alpha)``."""
    k_alpha = math.exp(special.gammaln(alpha + 0.5) - special.gammaln(alpha))
    return math.gamma(alpha) * (1.0 + a * math.sqrt(beta) * k_alpha)


def moment_curve(backend_factory, l, nbetas) -> list[tuple[float, float]]:
    """``[(nbeta, E[w^l])]`` with ``backend_factory(nbeta)`` a posterior backend."""
    l = np.asarray(l)
    out = []
    for nb in nbetas:
        post = backend_factory(nb).posterior()
        out.append((float(nb), post.expect(lambda w: np.prod(w**l, axis=-1))))
    return out


def write_scaling_csv(path, rows, append: bool = False):
    path = Path(path)
    new = not path.exists() or not append
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCALING_COLUMNS)
        if new:
            writer.writeheader()
        for r in rows:
            writer.writerow(r)


def scaling_row(law: ScalingLaw, fit: ScalingFit) -> dict:
    fmt = lambda t: " ".join(map(str, t))
    return {"k": fmt(law.k), "h": fmt(law.h), "l": fmt(law.l), "lambda_l": str(law.lambda_l), "tau": str(law.tau),
            "m_l": law.m_l, "slope_hat": fit.slope_hat, "C_hat": fit.C_hat,
            "C_theory": "" if law.C is None else law.C, "r2": fit.r2}
