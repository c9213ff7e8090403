"""Susceptibility estimators, coupling kernels and per-sample susceptibilities.

All estimators are minus a restricted covariance against a loss variation;
they differ in the posterior (population ``K`` or empirical ``K_n``), in
whether lifts are averaged over ``q`` or over the data, in how expectations
are computed (quadrature or chains) and in whether each support's summand
is weighted by its partition-function ratio.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .asymptotics import scaling_law
from .lift import Lift
from .loss import empirical_loss_variation_lift, loss_variation_lift
from .model_zoo import Dataset, ModelFamily, Perturbation
from .observables import (Observable, ObservableTerm, covariance_breakdown, empirical_observable,
                          population_observable)
from .posterior import (DEFAULT_QUAD, FULL, QuadratureBackend, QuadratureConfig, level_set_rule)
from .sgld import batch_means_se

ESTIMATOR_KINDS = ("population_ren", "population", "ideal", "ren", "sgld")
RESULT_COLUMNS = ("model_id", "obs_id", "xi_id", "estimator", "n", "beta", "nbeta", "value", "mc_se", "seed")


@dataclass(frozen=True)
class SusceptibilityResult:
    value: float
    estimator_kind: str
    nbeta: float
    n: int | None = None
    decomposition_id: str = ""
    mc_std_err: float | None = None
    model_id: str = ""
    obs_id: str = ""
    xi_id: str = ""
    seed: int | None = None

    def __post_init__(self):
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.estimator_kind!r}")
        if self.estimator_kind.startswith("population") and self.mc_std_err is not None:
            raise ValueError("population estimators carry no Monte Carlo error")

    def row(self) -> dict:
        beta = self.nbeta / self.n if self.n else ""
        return {"model_id": self.model_id, "obs_id": self.obs_id, "xi_id": self.xi_id,
                "estimator": self.estimator_kind, "n": self.n if self.n is not None else "",
                "beta": beta, "nbeta": self.nbeta, "value": self.value,
                "mc_se": "" if self.mc_std_err is None else self.mc_std_err,
                "seed": "" if self.seed is None else self.seed}


def decomposition_id(obs: Observable) -> str:
    parts = []
    for t in obs.terms:
        s = t.support.key
        if any(t.beta):
            s += "^" + "".join(map(str, t.beta))
        if any(t.tangential):
            s += "~" + "".join(map(str, t.tangential))
        parts.append(s)
    return "+".join(parts)


def _weighted_total(breakdown, weighted: bool, check: bool = True) -> float:
    summands = breakdown.summands(check)
    if not weighted:
        return float(sum(summands))
    log_zw = breakdown.full.log_z
    return float(sum(math.exp(p.posterior.log_z - log_zw) * s for p, s in zip(breakdown.pieces, summands)))


def _result(value, kind, model, obs, xi, nbeta, n=None, se=None, seed=None):
    return SusceptibilityResult(value, kind, nbeta, n, decomposition_id(obs), se, model.model_id, obs.obs_id,
                                xi.xi_id, seed)


def chi_pop_ren(model: ModelFamily, obs: Observable, xi: Perturbation, nbeta: float,
                config: QuadratureConfig = DEFAULT_QUAD, practice: bool = False) -> SusceptibilityResult:
    """Renormalized population susceptibility ``-Cov^res`` under ``exp(-nbeta K) phi``."""
    backend = QuadratureBackend.population(model, nbeta, config)
    bd = covariance_breakdown(population_observable(obs), loss_variation_lift(model, xi), backend, practice)
    return _result(-bd.total(), "population_ren", model, obs, xi, nbeta)


def chi_pop(model: ModelFamily, obs: Observable, xi: Perturbation, nbeta: float,
            config: QuadratureConfig = DEFAULT_QUAD) -> SusceptibilityResult:
    """Population susceptibility with the partition-function ratios ``Z^S / Z^W`` kept."""
    backend = QuadratureBackend.population(model, nbeta, config)
    bd = covariance_breakdown(population_observable(obs), loss_variation_lift(model, xi), backend)
    return _result(-_weighted_total(bd, True), "population", model, obs, xi, nbeta)


def chi_ren_hat(model: ModelFamily, obs: Observable, xi: Perturbation, data: Dataset, nbeta: float,
                backend=None, config: QuadratureConfig = DEFAULT_QUAD, practice: bool = False) -> SusceptibilityResult:
    """Renormalized estimator with empirical lifts, ``K_n`` posteriors and ``Delta K_n``.

    ``backend=None`` uses empirical quadrature (the exact long-chain limit);
    an :class:`~susceptlab.sgld.SgldBackend` gives the chain estimator with a
    delta-method standard error.
    """
    n = len(data)
    if backend is None:
        backend = QuadratureBackend.empirical(model, data, nbeta, config)
    bd = covariance_breakdown(empirical_observable(obs, data), empirical_loss_variation_lift(model, xi, data),
                              backend, practice)
    if getattr(backend, "exact", True):
        return _result(-bd.total(), "ren", model, obs, xi, nbeta, n, seed=data.seed)
    value = -bd.total(check=False)
    return _result(value, "sgld", model, obs, xi, nbeta, n, se=chain_std_err(bd), seed=data.seed)


def chain_std_err(breakdown) -> float:
    """Delta-method standard error of ``-sum_i [mean(a_i b_i) - mean(a_i) mean(c)]``.

    Each chain contributes the batch-means error of its linearized series;
    distinct chains are independent.
    """
    c_bar = breakdown.mean_b_full
    series: dict[int, np.ndarray] = {}
    owners: dict[int, object] = {}

    def add(post, s):
        key = id(post)
        owners[key] = post
        series[key] = series.get(key, 0.0) + s

    a_bar_total = 0.0
    for p in breakdown.pieces:
        add(p.posterior, -(p.a * p.b - c_bar * p.a))
        a_bar_total += p.mean_a()
    add(breakdown.full, a_bar_total * breakdown.b_full)
    var = 0.0
    for key, s in series.items():
        var += batch_means_se(np.broadcast_to(s, (owners[key].size,)), n_chains=getattr(owners[key], "n_chains", 1)) ** 2
    return math.sqrt(var)


def chi_ideal_hat(model: ModelFamily, obs: Observable, xi: Perturbation, data: Dataset, nbeta: float,
                  config: QuadratureConfig = DEFAULT_QUAD) -> SusceptibilityResult:
    """Renormalized summands weighted by empirical ratios ``Z^{emp,S_i} / Z^{emp}``."""
    backend = QuadratureBackend.empirical(model, data, nbeta, config)
    bd = covariance_breakdown(empirical_observable(obs, data), empirical_loss_variation_lift(model, xi, data), backend)
    return _result(-_weighted_total(bd, True), "ideal", model, obs, xi, nbeta, len(data), seed=data.seed)


# per-sample susceptibility


def per_sample_susceptibility(model: ModelFamily, obs: Observable, x, nbeta: float, backend=None,
                              config: QuadratureConfig = DEFAULT_QUAD):
    """``chi_x = -Cov^res(O, f(x, .) - K)`` (with the order normalization), vectorized in ``x``."""
    backend = backend or QuadratureBackend.population(model, nbeta, config)
    pop = population_observable(obs)
    x = np.asarray(x, dtype=float)
    total = -covariance_breakdown(pop, -model.K, backend).total() * np.ones_like(x)
    for r, coef in model.f.x_coefficients().items():
        cov = covariance_breakdown(pop, coef, backend).total()
        total = total - cov * x**r
    return total if total.ndim else float(total)


# coupling kernels


def kernel_sigma(model: ModelFamily, term: ObservableTerm) -> float:
    """``sigma = lambda_{j+k} - lambda`` on the free coordinates of the term's support."""
    free = term.support.free_coords(model.dim)
    if not free:
        return 0.0
    j = term.lift.min_w_exponent()
    k = [model.k[i] for i in free]
    h = [model.h[i] for i in free]
    law = scaling_law(k, h, [j[i] + model.k[i] for i in free])
    return float(law.tau)


class CouplingKernel:
    """Hybrid kernel ``kappa(x, x')`` of a functional observable term.

    ``kind`` is ``"population"`` (``K`` posteriors), ``"empirical"`` (``K_n``
    posteriors) or ``"sharp_cutoff"`` (uniform laws on sublevel sets of ``K``
    with prefactor ``eps^-sigma``).  The kernel is a polynomial in
    ``(x, x')``; its coefficient table is computed once.
    """

    def __init__(self, model: ModelFamily, term: ObservableTerm, kind: str = "population", nbeta: float | None = None,
                 data: Dataset | None = None, eps: float | None = None, config: QuadratureConfig = DEFAULT_QUAD):
        if term.order != 0:
            raise ValueError("coupling kernels are defined for functional terms")
        self.model, self.term, self.kind = model, term, kind
        g_parts = term.lift.x_coefficients()
        f_parts = model.f.x_coefficients()
        self.prefactor = 1.0
        self.sigma = None
        if kind in ("population", "empirical"):
            if nbeta is None:
                raise ValueError("tempered kernels need nbeta")
            if kind == "population":
                backend = QuadratureBackend.population(model, nbeta, config)
            else:
                if data is None:
                    raise ValueError("empirical kernel needs data")
                backend = QuadratureBackend.empirical(model, data, nbeta, config)
            post_s = backend.posterior(term.support)
            post_w = backend.posterior(FULL)
            s_pts, s_w = post_s.points, post_s.weights
            w_pts, w_w = post_w.points, post_w.weights
        elif kind == "sharp_cutoff":
            if eps is None:
                raise ValueError("sharp-cutoff kernel needs eps")
            self.sigma = kernel_sigma(model, term)
            self.prefactor = eps ** (-self.sigma)
            s_pts, s_w = level_set_rule(model, eps, term.support, config)
            w_pts, w_w = level_set_rule(model, eps, FULL, config)
        else:
            raise ValueError(f"unknown kernel kind {kind!r}")
        rg = max(g_parts) + 1
        rf = max(f_parts) + 1
        gv = {r: c.evaluate_w(s_pts) for r, c in g_parts.items()}
        fs = {s: c.evaluate_w(s_pts) for s, c in f_parts.items()}
        fw = {s: float(np.sum(w_w * c.evaluate_w(w_pts))) for s, c in f_parts.items()}
        table = np.zeros((rg, rf))
        for r, g in gv.items():
            eg = float(np.sum(s_w * g))
            for s, f in fs.items():
                table[r, s] = float(np.sum(s_w * g * f)) - eg * fw[s]
        self.table = self.prefactor * table

    def __call__(self, x, xp):
        return np.polynomial.polynomial.polyval2d(np.asarray(x, float), np.asarray(xp, float), self.table)

    def grid(self, xs, xps) -> np.ndarray:
        return np.polynomial.polynomial.polygrid2d(np.asarray(xs, float), np.asarray(xps, float), self.table)

    def domination_bound(self, x, xp, resolution: int = 201):
        """``sup_S |g(x, .)| * sup_W |f(x', .)|`` on a tensor grid of ``w``."""
        model = self.model
        axes = [np.linspace(lo, hi, resolution) for lo, hi in model.domain]
        mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
        on_s = self.term.support.embed(model.dim, mesh[:, list(self.term.support.free_coords(model.dim))])
        on_s = np.unique(on_s, axis=0)
        x = np.atleast_1d(np.asarray(x, float))
        xp = np.atleast_1d(np.asarray(xp, float))
        sup_g = np.array([np.max(np.abs(self.term.lift.evaluate(xi, on_s))) for xi in x])
        sup_f = np.array([np.max(np.abs(model.f.evaluate(xj, mesh))) for xj in xp])
        return sup_g * sup_f


def coupling_kernel(kernel: CouplingKernel, x, xp):
    return kernel(x, xp)


# output


def write_results_csv(path, results, append: bool = True):
    """Append result rows (header written when the file is new)."""
    path = Path(path)
    new = not path.exists() or not append
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if new:
            writer.writeheader()
        for r in results:
            writer.writerow(r.row() if isinstance(r, SusceptibilityResult) else r)
