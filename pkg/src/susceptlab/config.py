"""TOML experiment configs.

Example::

    seed = 7

    [model]
    k = [1]
    h = [0]
    domain = [[0.0, 1.0]]

    [[observables]]
    name = "w2"
    terms = [{ lift = { monomials = [{ w = [2] }] } }]

    [[perturbations]]
    hermite_index = 1

    [schedule]
    n = [100, 10000]
    beta = "one_over_log_n"
    replicates = 50

A lift is either ``{ monomials = [{coef, w, x}] }`` or
``{ loss_difference = [w*...] }`` for ``f(x, w) - f(x, w*)``.  Supports are
``{ fixed = { "1" = 0.5 } }`` (coordinate index as key).
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .lift import Lift
from .model_zoo import ModelFamily, Perturbation, make_monomial_gaussian
from .observables import Observable, ObservableTerm
from .posterior import QuadratureConfig, Submanifold
from .sgld import SgldConfig


class ConfigError(ValueError):
    pass


def _get(table: dict, key: str, where: str, default=..., kind=None):
    if key not in table:
        if default is ...:
            raise ConfigError(f"{where}: missing key '{key}'")
        return default
    val = table[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def parse_model(t: dict) -> ModelFamily:
    try:
        k = _get(t, "k", "model", kind=list)
        return make_monomial_gaussian(k, _get(t, "h", "model", None), _get(t, "domain", "model", None),
                                      float(_get(t, "loss_scale", "model", 0.5)), str(_get(t, "name", "model", "")))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc


def parse_lift(t: dict, model: ModelFamily, where: str) -> Lift:
    d = model.dim
    if "loss_difference" in t:
        center = [float(v) for v in t["loss_difference"]]
        if len(center) != d:
            raise ConfigError(f"{where}.loss_difference: need {d} coordinates")
        return model.f - model.f.restrict(dict(enumerate(center)))
    mons = _get(t, "monomials", where, kind=list)
    out = Lift(d, {})
    for i, mono in enumerate(mons):
        w = mono.get("w", [0] * d)
        if len(w) != d:
            raise ConfigError(f"{where}.monomials[{i}].w: need {d} exponents")
        out = out + Lift.monomial(d, w, int(mono.get("x", 0)), float(mono.get("coef", 1.0)))
    return out


def parse_support(t: dict | None, where: str) -> Submanifold:
    if not t:
        return Submanifold()
    fixed = _get(t, "fixed", where, {}, dict)
    try:
        return Submanifold({int(i): float(v) for i, v in fixed.items()})
    except ValueError as exc:
        raise ConfigError(f"{where}.fixed: {exc}") from exc


def parse_observable(t: dict, model: ModelFamily, idx: int) -> Observable:
    where = f"observables[{idx}]"
    terms = []
    for j, tt in enumerate(_get(t, "terms", where, kind=list)):
        w = f"{where}.terms[{j}]"
        try:
            support = parse_support(tt.get("support"), w + ".support").validate(model)
            terms.append(ObservableTerm(parse_lift(_get(tt, "lift", w, kind=dict), model, w + ".lift"), support,
                                        tuple(tt.get("normal_beta", ())), tuple(tt.get("tangential", ())),
                                        tt.get("order"), tt.get("center")))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{w}: {exc}") from exc
    return Observable(tuple(terms), str(t.get("name", f"obs{idx}")))


def parse_perturbation(t: dict, idx: int) -> Perturbation:
    try:
        return Perturbation(int(_get(t, "hermite_index", f"perturbations[{idx}]")), float(t.get("scale", 1.0)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"perturbations[{idx}]: {exc}") from exc


@dataclass
class Schedule:
    n: list[int]
    beta: str | float = "one_over_log_n"
    replicates: int = 1

    def beta_for(self, n: int) -> float:
        if self.beta == "one_over_log_n":
            return 1.0 / math.log(n)
        return float(self.beta)


@dataclass
class ExperimentConfig:
    model: ModelFamily
    observables: list[Observable]
    perturbations: list[Perturbation]
    schedule: Schedule | None
    backend: str = "quadrature"
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    sgld: SgldConfig = field(default_factory=SgldConfig)
    seed: int = 0
    sections: dict = field(default_factory=dict)
    digest: str = ""


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc
    model = parse_model(_get(raw, "model", "config", kind=dict))
    observables = [parse_observable(t, model, i) for i, t in enumerate(raw.get("observables", []))]
    perturbations = [parse_perturbation(t, i) for i, t in enumerate(raw.get("perturbations", []))]
    schedule = None
    if "schedule" in raw:
        s = raw["schedule"]
        n = _get(s, "n", "schedule", kind=list)
        if not n:
            raise ConfigError("schedule.n: schedule is empty")
        if any(not isinstance(v, int) or v < 2 for v in n):
            raise ConfigError("schedule.n: sample sizes must be integers >= 2")
        beta = s.get("beta", "one_over_log_n")
        if not (beta == "one_over_log_n" or (isinstance(beta, (int, float)) and beta > 0)):
            raise ConfigError("schedule.beta: expected 'one_over_log_n' or a positive number")
        reps = _get(s, "replicates", "schedule", 1, int)
        if reps < 1:
            raise ConfigError("schedule.replicates: must be >= 1")
        schedule = Schedule(list(n), beta, reps)
    backend = raw.get("backend", {}).get("kind", "quadrature")
    if backend not in ("quadrature", "sgld"):
        raise ConfigError(f"backend.kind: unknown backend {backend!r}")
    q = raw.get("quad", {})
    quad = QuadratureConfig(int(q.get("nodes", 16)), int(q.get("refine_depth", 6)),
                            int(q.get("max_points", 4_000_000)))
    sg = raw.get("sgld", {})
    try:
        sgld = SgldConfig(sg.get("step_size"), int(sg.get("chain_length", 100_000)), int(sg.get("burn_in", 1_000)),
                          float(sg.get("localization", 0.0)),
                          tuple(sg["center"]) if "center" in sg else None, sg.get("minibatch_size"),
                          int(raw.get("seed", 0)), int(sg.get("n_chains", 1)))
    except ValueError as exc:
        raise ConfigError(f"sgld: {exc}") from exc
    known = {"model", "observables", "perturbations", "schedule", "backend", "quad", "sgld", "seed"}
    sections = {k: v for k, v in raw.items() if k not in known}
    return ExperimentConfig(model, observables, perturbations, schedule, backend, quad, sgld,
                            int(raw.get("seed", 0)), sections, hashlib.sha256(text.encode()).hexdigest())


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
