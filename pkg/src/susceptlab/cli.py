"""Command-line experiment runner.

Subcommands ``converge``, ``moments``, ``pattern``, ``kernel`` and
``sgld-check`` read a TOML config, write CSV files into ``--out`` and append
a JSON line with the config hash, git revision and wall time to
``<out>/runs.jsonl``.  Results depend only on the config and master seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .asymptotics import fit_scaling, moment_curve, scaling_law, scaling_row, write_scaling_csv
from .config import ConfigError, ExperimentConfig, load_config
from .model_zoo import sample_data
from .patterning import assemble_matrix, pattern, ridge_error, write_matrix_csv
from .posterior import QuadratureBackend
from .sgld import SgldBackend
from .susceptibility import (RESULT_COLUMNS, CouplingKernel, chi_pop_ren, chi_ren_hat, write_results_csv)

log = logging.getLogger("susceptlab")


def replicate_seed(master: int, rep: int, chain: int = 0, n: int = 0) -> int:
    """Integer seed of the stream keyed by ``(replicate, chain, n)``."""
    ss = np.random.SeedSequence(master, spawn_key=(rep, chain, n))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _sidecar(out: Path, command: str, cfg: ExperimentConfig, seed: int, wall: float, outputs):
    rec = {"command": command, "config_sha256": cfg.digest, "git_revision": _git_revision(), "seed": seed,
           "wall_time_s": round(wall, 3), "outputs": [str(p) for p in outputs]}
    with open(out / "runs.jsonl", "a") as fh:
        fh.write(json.dumps(rec) + "\n")


def _pool_map(fn, tasks, threads: int):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


# converge


def run_converge(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    if cfg.schedule is None:
        raise ConfigError("schedule: converge needs a [schedule] table")
    if not cfg.observables or not cfg.perturbations:
        raise ConfigError("converge needs at least one observable and one perturbation")
    sched = cfg.schedule
    tasks = [(n, rep) for n in sched.n for rep in range(sched.replicates)]

    def one(task):
        n, rep = task
        beta = sched.beta_for(n)
        seed = replicate_seed(cfg.seed, rep, 0, n)
        data = sample_data(cfg.model, n, seed)
        backend = None
        if cfg.backend == "sgld":
            sg = dataclasses.replace(cfg.sgld, seed=replicate_seed(cfg.seed, rep, 1, n))
            backend = SgldBackend(cfg.model, data, n * beta, sg)
        rows = []
        for obs in cfg.observables:
            for xi in cfg.perturbations:
                est = chi_ren_hat(cfg.model, obs, xi, data, n * beta, backend, cfg.quad)
                pop = chi_pop_ren(cfg.model, obs, xi, n * beta, cfg.quad)
                rows.append((n, rep, obs.obs_id, xi.xi_id, beta, est, pop))
        return rows

    results = [r for rows in _pool_map(one, tasks, threads) for r in rows]
    path = out / "converge.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for n, rep, obs_id, xi_id, beta, est, pop in results:
            row = est.row()
            w.writerow(row)
            w.writerow(pop.row() | {"n": n, "beta": beta, "seed": row["seed"]})
            w.writerow(row | {"estimator": "diff", "value": est.value - pop.value})
        # summary rows per (n, observable, perturbation)
        keys = sorted({(n, o, x) for n, _, o, x, _, _, _ in results}, key=lambda t: (t[1], t[2], t[0]))
        for n, obs_id, xi_id in keys:
            diffs = np.array([e.value - p.value for nn, _, o, x, _, e, p in results
                              if (nn, o, x) == (n, obs_id, xi_id)])
            beta = sched.beta_for(n)
            se = float(np.std(diffs, ddof=1) / np.sqrt(diffs.size)) if diffs.size > 1 else ""
            base = {"model_id": cfg.model.model_id, "obs_id": obs_id, "xi_id": xi_id, "n": n, "beta": beta,
                    "nbeta": n * beta, "seed": ""}
            w.writerow(base | {"estimator": "median_abs_diff", "value": float(np.median(np.abs(diffs))), "mc_se": ""})
            w.writerow(base | {"estimator": "mean_diff", "value": float(np.mean(diffs)), "mc_se": se})
    return path


# moments


def run_moments(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    sec = cfg.sections.get("moments", {})
    ls = sec.get("l", [[1] * cfg.model.dim])
    nbetas = sec.get("nbeta", [10.0**e for e in range(2, 7)])
    model = cfg.model

    def one(l):
        law = scaling_law(model.k, model.h, l, model.loss_scale)
        curve = moment_curve(lambda nb: QuadratureBackend.population(model, nb, cfg.quad), l, nbetas)
        return scaling_row(law, fit_scaling(curve, law))

    rows = _pool_map(one, ls, threads)
    path = out / "moments.csv"
    write_scaling_csv(path, rows)
    return path


# pattern


def run_pattern(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    sec = cfg.sections.get("pattern", {})
    lam = float(sec.get("lambda", 1e-2))
    nbeta = float(sec.get("nbeta", 100.0))
    target = np.asarray(sec.get("target", [1.0] * len(cfg.observables)), dtype=float)
    model = cfg.model
    A = assemble_matrix(cfg.observables, cfg.perturbations,
                        lambda o, x: chi_pop_ren(model, o, x, nbeta, cfg.quad), "population_ren",
                        {"model": model.model_id, "nbeta": nbeta})
    write_matrix_csv(out / "pattern_matrix.csv", A)
    rows = []
    sol = pattern(A.entries, target, lam)
    err = ridge_error(A.entries, lam) if np.any(A.entries) else ""
    rows += [{"n": "", "replicate": "", "estimator": "population_ren", "lambda": lam, "component": j,
              "h": float(v), "residual_norm": sol.residual_norm, "ridge_error": err} for j, v in enumerate(sol.h_vector)]
    if cfg.schedule is not None:
        tasks = [(n, rep) for n in cfg.schedule.n for rep in range(cfg.schedule.replicates)]

        def one(task):
            n, rep = task
            data = sample_data(model, n, replicate_seed(cfg.seed, rep, 0, n))
            nb = n * cfg.schedule.beta_for(n)
            Ahat = assemble_matrix(cfg.observables, cfg.perturbations,
                                   lambda o, x: chi_ren_hat(model, o, x, data, nb, None, cfg.quad), "ren")
            return n, rep, pattern(Ahat.entries, target, lam)

        for n in cfg.schedule.n:
            nb = n * cfg.schedule.beta_for(n)
            Apop = assemble_matrix(cfg.observables, cfg.perturbations,
                                   lambda o, x: chi_pop_ren(model, o, x, nb, cfg.quad), "population_ren")
            s = pattern(Apop.entries, target, lam)
            rows += [{"n": n, "replicate": "", "estimator": "population_ren", "lambda": lam, "component": j,
                      "h": float(v), "residual_norm": s.residual_norm, "ridge_error": ""}
                     for j, v in enumerate(s.h_vector)]
        for n, rep, s in _pool_map(one, tasks, threads):
            rows += [{"n": n, "replicate": rep, "estimator": "ren", "lambda": lam, "component": j, "h": float(v),
                      "residual_norm": s.residual_norm, "ridge_error": ""} for j, v in enumerate(s.h_vector)]
    path = out / "pattern.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n", "replicate", "estimator", "lambda", "component", "h",
                                           "residual_norm", "ridge_error"])
        w.writeheader()
        w.writerows(rows)
    return path


# kernel


def run_kernel(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    sec = cfg.sections.get("kernel", {})
    kind = sec.get("kind", "population")
    xs = np.asarray(sec.get("x", np.linspace(-3, 3, 13).tolist()), dtype=float)
    xps = np.asarray(sec.get("xp", xs.tolist()), dtype=float)
    nbeta = float(sec.get("nbeta", 100.0))
    data = None
    if kind == "empirical":
        n = int(sec.get("n", 1000))
        data = sample_data(cfg.model, n, replicate_seed(cfg.seed, 0, 0, n))
    path = out / "kernel.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["obs_id", "term", "x", "xp", "kappa"])
        for obs in cfg.observables:
            for ti, term in enumerate(obs.terms):
                ker = CouplingKernel(cfg.model, term, kind, nbeta, data, sec.get("eps"), cfg.quad)
                grid = ker.grid(xs, xps)
                for i, x in enumerate(xs):
                    for j, xp in enumerate(xps):
                        w.writerow([obs.obs_id, ti, float(x), float(xp), float(grid[i, j])])
    return path


# sgld check


def run_sgld_check(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    sec = cfg.sections.get("sgld_check", {})
    n = int(sec.get("n", 1000))
    beta = float(sec.get("beta", 0.1))
    data = sample_data(cfg.model, n, replicate_seed(cfg.seed, 0, 0, n))
    backend = SgldBackend(cfg.model, data, n * beta, dataclasses.replace(cfg.sgld, seed=replicate_seed(cfg.seed, 0, 1, n)))
    results = []
    for obs in cfg.observables:
        for xi in cfg.perturbations:
            results.append(chi_ren_hat(cfg.model, obs, xi, data, n * beta, backend, cfg.quad))
            results.append(chi_ren_hat(cfg.model, obs, xi, data, n * beta, None, cfg.quad))
    path = out / "sgld_check.csv"
    write_results_csv(path, results, append=False)
    return path


COMMANDS = {"converge": run_converge, "moments": run_moments, "pattern": run_pattern, "kernel": run_kernel,
            "sgld-check": run_sgld_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="susceptlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        s.add_argument("--out", type=Path, default=Path("."))
        s.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error ({args.config}): {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.sgld = dataclasses.replace(cfg.sgld, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        path = COMMANDS[args.command](cfg, args.out, max(1, args.threads))
    except ConfigError as exc:
        print(f"config error ({args.config}): {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        raise RuntimeError(f"{args.command} run failed for {args.config}: {exc}") from exc
    _sidecar(args.out, args.command, cfg, cfg.seed, time.perf_counter() - start, [path])
    log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
