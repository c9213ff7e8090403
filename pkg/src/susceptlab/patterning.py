"""Susceptibility matrices, the ridge-regularized inverse and patterning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import linalg


class MatrixAssemblyError(RuntimeError):
    def __init__(self, failures):
        self.failures = failures
        lines = [f"  ({i}, {j}) {obs} x {xi}: {err}" for i, j, obs, xi, err in failures]
        super().__init__("susceptibility matrix entries failed:\n" + "\n".join(lines))


@dataclass
class SusceptibilityMatrix:
    """``H x m`` array with ``(i, j) = chi(O_i, xi_j)``."""

    entries: np.ndarray
    estimator_kind: str
    std_errs: np.ndarray | None = None
    obs_ids: tuple[str, ...] = ()
    xi_ids: tuple[str, ...] = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if self.entries.size == 0:
            raise ValueError("empty matrix")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("non-finite susceptibility entries")

    @property
    def shape(self):
        return self.entries.shape


def assemble_matrix(observables: Sequence, perturbations: Sequence, estimator: Callable, estimator_kind: str,
                    provenance: dict | None = None) -> SusceptibilityMatrix:
    """Evaluate ``estimator(obs, xi)`` (a :class:`SusceptibilityResult`) on every pair.

    All entries are attempted; failures are collected and reported together.
    """
    H, m = len(observables), len(perturbations)
    vals = np.zeros((H, m))
    ses = np.full((H, m), np.nan)
    failures = []
    for i, obs in enumerate(observables):
        for j, xi in enumerate(perturbations):
            try:
                res = estimator(obs, xi)
            except Exception as exc:  # noqa: BLE001 - reported per entry
                failures.append((i, j, getattr(obs, "obs_id", obs), getattr(xi, "xi_id", xi), repr(exc)))
                continue
            vals[i, j] = res.value
            if res.mc_std_err is not None:
                ses[i, j] = res.mc_std_err
    if failures:
        raise MatrixAssemblyError(failures)
    return SusceptibilityMatrix(vals, estimator_kind, None if np.all(np.isnan(ses)) else ses,
                                tuple(getattr(o, "obs_id", str(o)) for o in observables),
                                tuple(getattr(x, "xi_id", str(x)) for x in perturbations), dict(provenance or {}))


def ridge_inverse(A, lam: float) -> np.ndarray:
    """``R_lam(A) = A^T (A A^T + lam I)^-1`` by a Cholesky solve."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    gram = A @ A.T + lam * np.eye(A.shape[0])
    Y = linalg.cho_solve(linalg.cho_factor(gram, lower=True), np.eye(A.shape[0]))
    return A.T @ Y


@dataclass(frozen=True)
class RidgeSolution:
    lam: float
    h_vector: np.ndarray
    residual_norm: float


def pattern(A, b, lam: float) -> RidgeSolution:
    """Regularized patterning perturbation ``h = R_lam(A) b`` and residual ``|A h - b|``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if b.size != A.shape[0]:
        raise ValueError(f"target has length {b.size}, matrix has {A.shape[0]} rows")
    h = ridge_inverse(A, lam) @ b
    return RidgeSolution(lam, h, float(np.linalg.norm(A @ h - b)))


def ridge_error(A, lam: float, rcond: float = 1e-10) -> float:
    """``|R_lam(A) - A^+|_op = lam / (s (s^2 + lam))`` at the smallest positive singular value ``s``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("zero matrix")
    pos = s[s > rcond * s[0]]
    return float(np.max(lam / (pos * (pos**2 + lam))))


# independent pseudoinverse via cyclic Jacobi


def jacobi_eigh(S, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(S, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * max(np.linalg.norm(a), 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a).copy(), v


def jacobi_pseudoinverse(A, rcond: float = 1e-10) -> np.ndarray:
    """``A^+ = A^T U diag(1/s^2) U^T`` from the Jacobi eigenpairs of ``A A^T``.

    Singular values are cut at ``rcond * s_max``, but never below the
    rounding floor of the Gram eigenvalues (``s^2 ~ H eps s_max^2``).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    evals, U = jacobi_eigh(A @ A.T)
    smax2 = max(float(np.max(evals)), 0.0)
    floor = max(rcond**2, 16 * A.shape[0] * np.finfo(float).eps)
    keep = evals > floor * smax2
    inv = np.zeros_like(evals)
    inv[keep] = 1.0 / evals[keep]
    return A.T @ (U * inv) @ U.T


# csv


def write_matrix_csv(path, M: SusceptibilityMatrix):
    H, m = M.shape
    with open(Path(path), "w") as fh:
        fh.write(f"H={H},m={m},estimator_kind={M.estimator_kind}\n")
        for row in M.entries:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> SusceptibilityMatrix:
    lines = Path(path).read_text().splitlines()
    head = dict(kv.split("=", 1) for kv in lines[0].split(","))
    H, m = int(head["H"]), int(head["m"])
    entries = np.array([[float(v) for v in line.split(",")] for line in lines[1:1 + H]])
    if entries.shape != (H, m):
        raise ValueError(f"matrix body has shape {entries.shape}, header says {(H, m)}")
    return SusceptibilityMatrix(entries, head["estimator_kind"])
