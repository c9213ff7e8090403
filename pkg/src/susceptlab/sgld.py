"""Langevin chains on full and restricted tempered posteriors.

Each step moves only the free coordinates of the support:

    w <- w - (eps/2) grad(n beta G + gamma/2 |w - w*|^2 - log phi) + sqrt(eps) z

and folds the result back into the box by reflection.  Chains are
vectorized over a leading axis so several independent chains advance in
lockstep.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lift import Lift
from .model_zoo import Dataset, ModelFamily
from .posterior import FULL, Submanifold, TemperedPosteriorSpec

N_BATCHES = 20


class SgldDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SgldConfig:
    """``step_size=None`` selects the stability rule ``0.5 / (n beta max|G''|)``."""

    step_size: float | None = None
    chain_length: int = 100_000
    burn_in: int = 1_000
    localization: float = 0.0
    center: tuple[float, ...] | None = None
    minibatch_size: int | None = None
    seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.burn_in < 0 or self.burn_in >= self.chain_length:
            raise ValueError("need 0 <= burn_in < chain_length")
        if self.localization < 0:
            raise ValueError("localization must be nonnegative")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError("minibatch size must be positive")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")


@dataclass
class ChainSamples:
    """Post-burn-in draws, shape ``(T, d)`` (chains concatenated)."""

    samples: np.ndarray
    step_size: float
    seed: int
    support: Submanifold = FULL
    center: tuple[float, ...] | None = None
    n_chains: int = 1
    _weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def points(self) -> np.ndarray:
        return self.samples

    @property
    def weights(self) -> np.ndarray:
        if self._weights is None:
            self._weights = np.full(len(self.samples), 1.0 / len(self.samples))
        return self._weights

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def log_z(self) -> float:
        raise NotImplementedError("partition functions are not estimated from chains")

    def values(self, g) -> np.ndarray:
        vals = np.asarray(g(self.samples), dtype=float)
        return np.broadcast_to(vals, (len(self.samples),))

    def expect(self, g) -> float:
        return float(np.mean(self.values(g)))

    def mean_se(self, g) -> tuple[float, float]:
        return sample_mean(self, g)


def batch_means_se(series, n_batches: int = N_BATCHES, n_chains: int = 1) -> float:
    """Standard error of the mean of an autocorrelated series by batch means.

    With several concatenated chains the batches are formed within chains.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    per = x.reshape(n_chains, -1)
    b = max(n_batches // n_chains, 2) if n_chains > 1 else n_batches
    size = per.shape[1] // b
    if size == 0:
        return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    means = per[:, : b * size].reshape(n_chains * b, size).mean(axis=1)
    if np.all(means == means[0]):
        return 0.0
    return float(np.std(means, ddof=1) / math.sqrt(means.size))


def sample_mean(chain: ChainSamples, g) -> tuple[float, float]:
    """Chain average of ``g`` and its batch-means standard error (20 batches)."""
    if chain.size == 0:
        raise ValueError("empty chain")
    vals = chain.values(g)
    return float(np.mean(vals)), batch_means_se(vals, N_BATCHES, chain.n_chains)


def _reflect(x, lo, hi):
    span = hi - lo
    y = np.mod(x - lo, 2.0 * span)
    return lo + np.where(y > span, 2.0 * span - y, y)


def _compiled_gradient(lift: Lift, free):
    """Per free coordinate ``(exps, coefs)`` of the deterministic lift's partial."""
    out = []
    for i in free:
        der = lift.deriv(i)
        comp = der._compile().get(0)
        if comp is None:
            comp = (np.zeros((1, lift.dim), dtype=np.int64), np.zeros(1))
        out.append(comp)
    return out


def _grad(parts, w):
    cols = []
    for exps, coefs in parts:
        cols.append(np.prod(w[:, None, :] ** exps, axis=-1) @ coefs)
    return np.stack(cols, axis=-1)


def stability_step_size(model: ModelFamily, loss: Lift, nbeta: float, support: Submanifold = FULL,
                        localization: float = 0.0, grid: int = 33) -> float:
    """``0.5 / (n beta max |Hess_free G| + gamma)`` with the max over a grid of the support."""
    free = support.free_coords(model.dim)
    if not free:
        return 1.0
    axes = [np.linspace(*model.domain[i], grid) for i in free]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = support.embed(model.dim, np.stack([m.ravel() for m in mesh], axis=-1))
    hess = np.zeros((pts.shape[0], len(free), len(free)))
    for a, i in enumerate(free):
        for b, j in enumerate(free):
            hess[:, a, b] = loss.deriv(i).deriv(j).evaluate_w(pts)
    curv = float(np.max(np.linalg.norm(hess, ord=2, axis=(1, 2))))
    stiffness = nbeta * curv + localization
    if stiffness <= 0:
        width = max(hi - lo for lo, hi in model.domain)
        return 0.01 * width**2
    return 0.5 / stiffness


def run_chain(model: ModelFamily, data: Dataset | None, spec: TemperedPosteriorSpec, cfg: SgldConfig,
              seed=None, loss: Lift | None = None) -> ChainSamples:
    """Run ``cfg.n_chains`` chains targeting the (localized) posterior of ``spec``.

    ``data`` feeds minibatch gradients; full-batch chains use ``spec.loss``
    unless a deterministic ``loss`` lift is given.
    """
    support = spec.support
    d = model.dim
    free = support.free_coords(d)
    nbeta = spec.nbeta
    loss = spec.loss if loss is None else loss
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    eps = cfg.step_size or stability_step_size(model, loss, nbeta, support, cfg.localization)
    n_keep = cfg.chain_length - cfg.burn_in
    if n_keep < 1:
        raise ValueError("no steps after burn-in")
    center = cfg.center
    if center is not None:
        center = np.array(center, dtype=float)
        for i, v in support.fixed:
            center[i] = v
    if cfg.localization > 0 and center is None:
        raise ValueError("localization needs a center")
    C = cfg.n_chains
    start = center if center is not None else 0.5 * (model.lower + model.upper)
    w = np.tile(support.embed(d, np.asarray(start)[list(free)][None, :])[0], (C, 1))
    samples = np.empty((C, n_keep, d))
    if not free:
        samples[:] = w[:, None, :]
        return ChainSamples(samples.reshape(-1, d), eps, _seed_int(seed), support,
                            None if center is None else tuple(center), C)
    free = list(free)
    lo = model.lower[free]
    hi = model.upper[free]
    h = np.array(model.h, dtype=float)[free]
    has_prior = bool(np.any(h))
    if cfg.minibatch_size is None:
        parts = [(_compiled_gradient(loss, free), None)]
    else:
        if data is None:
            raise ValueError("minibatch gradients need the dataset")
        # gradient of sum_r m_r c_r(w) with minibatch moments m_r
        coeffs = model.f.x_coefficients()
        parts = [(_compiled_gradient(c, free), r) for r, c in sorted(coeffs.items())]
        x = np.asarray(data.points)
    limit = 10.0 * model.diameter + float(np.max(np.abs(np.concatenate([model.lower, model.upper]))))
    sqrt_eps = math.sqrt(eps)
    wf = w[:, free]
    for t in range(cfg.chain_length):
        w[:, free] = wf
        if cfg.minibatch_size is None:
            g = nbeta * _grad(parts[0][0], w)
        else:
            idx = rng.integers(0, x.size, size=cfg.minibatch_size)
            xb = x[idx]
            g = 0.0
            for comp, r in parts:
                g = g + nbeta * float(np.mean(xb**r)) * _grad(comp, w)
        if cfg.localization > 0:
            g = g + cfg.localization * (wf - center[free])
        if has_prior:
            with np.errstate(divide="ignore"):
                g = g - np.where(h > 0, h / wf, 0.0)
        wf = wf - 0.5 * eps * g + sqrt_eps * rng.standard_normal(wf.shape)
        if not np.all(np.isfinite(wf)) or np.any(np.abs(wf) > limit):
            raise SgldDivergenceError(f"chain left the box region at step {t}: w={wf.tolist()}, eps={eps:g}")
        wf = _reflect(wf, lo, hi)
        if t >= cfg.burn_in:
            samples[:, t - cfg.burn_in, :] = support.embed(d, wf)
    return ChainSamples(samples.reshape(-1, d), eps, _seed_int(seed), support,
                        None if center is None else tuple(center), C)


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1, dtype=np.uint64)[0])
    return int(seed) if seed is not None else 0


def chain_seed(master: int, key: str) -> np.random.SeedSequence:
    """Independent stream for the chain identified by ``key``."""
    return np.random.SeedSequence(master, spawn_key=(zlib.crc32(key.encode()),))


class SgldBackend:
    """Posterior provider whose expectations are chain averages.

    One chain (or chain group) per distinct ``(support, center)``; each gets a
    seed stream derived from the master seed and its key.
    """

    kind = "sgld"
    exact = False

    def __init__(self, model: ModelFamily, data: Dataset, nbeta: float, cfg: SgldConfig = SgldConfig(),
                 n: int | None = None):
        self.model, self.data, self.cfg = model, data, cfg
        self.nbeta = float(nbeta)
        self.n = len(data) if n is None else n
        self.loss = model.f.empirical(data)
        self._chains: dict = {}

    def posterior(self, support: Submanifold = FULL, center=None) -> ChainSamples:
        center = center if center is not None else self.cfg.center
        key = (support, None if center is None else tuple(float(c) for c in center))
        if key not in self._chains:
            spec = TemperedPosteriorSpec(self.model, self.n, self.nbeta / self.n, "empirical", self.data, support)
            cfg = SgldConfig(self.cfg.step_size, self.cfg.chain_length, self.cfg.burn_in, self.cfg.localization,
                             key[1], self.cfg.minibatch_size, self.cfg.seed, self.cfg.n_chains)
            label = f"{support.key}|{key[1]}"
            self._chains[key] = run_chain(self.model, self.data, spec, cfg, seed=chain_seed(self.cfg.seed, label))
        return self._chains[key]

    def expect(self, integrand, support: Submanifold = FULL) -> float:
        return self.posterior(support).expect(integrand)


# chain dumps


def write_chain(path, chain: ChainSamples):
    """Binary dump: three uint64 ``{T, d, seed}`` then row-major float64 samples."""
    samples = np.ascontiguousarray(chain.samples, dtype="<f8")
    header = np.array([samples.shape[0], samples.shape[1], chain.seed % 2**64], dtype="<u8")
    with open(Path(path), "wb") as fh:
        fh.write(header.tobytes())
        fh.write(samples.tobytes())


def read_chain(path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    T, d, seed = np.frombuffer(raw[:24], dtype="<u8")
    samples = np.frombuffer(raw[24:], dtype="<f8").reshape(int(T), int(d))
    return samples.copy(), int(seed)
