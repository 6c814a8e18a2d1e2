"""YAML experiment configuration: parsing, validation, defaults and the
resolved round-trip form written next to every run."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .core import (
    ConfigError,
    ExperimentConfig,
    ExploitConfig,
    ExploreConfig,
    HyperparamSpec,
    Prior,
)
from .engine import grid_initial_h
from .tasks import TASKS

TOP_LEVEL_KEYS = {
    "task", "population_size", "total_steps", "ready_interval", "eval_every", "window_size",
    "exploit", "explore", "exploit_mask", "mode", "seed", "quantum", "initial_h", "initial_grid",
    "hyperparams", "out", "backend", "suite",
}
EXPLOIT_KEYS = {"kind", "truncation_fraction", "alpha"}
EXPLORE_KEYS = {"kind", "factors", "sigma", "resample_prob"}
HYPERPARAM_KEYS = {"name", "prior", "lo", "hi", "values", "perturb_factors", "resample_prob",
                   "clamp_to_prior", "integer"}
SUITE_KEYS = {"seeds", "population_sizes", "top_k"}
GRID_KEYS = {"grid", "replicas"}


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    task: str
    task_constants: Dict[str, Any] = field(default_factory=dict)
    out: Optional[str] = None
    backend: str = "files"
    suite: Dict[str, Any] = field(default_factory=dict)

    def make_task(self):
        return TASKS[self.task](**self.task_constants)


def _reject_unknown(section: str, data: dict, allowed: set) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        where = f" in {section}" if section else ""
        raise ConfigError(f"unknown key {unknown[0]!r}{where}")


def _mapping(section: str, value) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{section} must be a mapping")
    return value


def _tuple2(key: str, value) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{key} must be a pair of numbers")
    return (float(value[0]), float(value[1]))


def _hyperparam(entry: dict) -> HyperparamSpec:
    entry = _mapping("hyperparams entry", entry)
    _reject_unknown("hyperparams entry", entry, HYPERPARAM_KEYS)
    if "name" not in entry or "prior" not in entry:
        raise ConfigError("hyperparams entries need a name and a prior")
    kind = entry["prior"]
    if kind == "categorical":
        prior = Prior(kind, values=tuple(entry.get("values", ())))
    else:
        prior = Prior(kind, _float_or_none(entry.get("lo")), _float_or_none(entry.get("hi")))
    kwargs = {}
    if "perturb_factors" in entry:
        kwargs["perturb_factors"] = _tuple2("perturb_factors", entry["perturb_factors"])
    for key in ("resample_prob", "clamp_to_prior", "integer"):
        if key in entry:
            kwargs[key] = entry[key]
    return HyperparamSpec(str(entry["name"]), prior, **kwargs)


def _float_or_none(x):
    return None if x is None else float(x)


def config_from_dict(raw: dict) -> RunConfig:
    raw = _mapping("config", raw)
    _reject_unknown("", raw, TOP_LEVEL_KEYS)
    if "task" not in raw:
        raise ConfigError("missing key 'task'")
    task = raw["task"]
    if isinstance(task, str):
        task = {"name": task}
    task = dict(_mapping("task", task))
    name = task.pop("name", None)
    if name not in TASKS:
        raise ConfigError(f"task: unknown task {name!r}; choose from {sorted(TASKS)}")
    for key in ("population_size", "total_steps"):
        if key not in raw:
            raise ConfigError(f"missing key {key!r}")

    exploit_raw = _mapping("exploit", raw.get("exploit"))
    _reject_unknown("exploit", exploit_raw, EXPLOIT_KEYS)
    explore_raw = dict(_mapping("explore", raw.get("explore")))
    _reject_unknown("explore", explore_raw, EXPLORE_KEYS)
    if "factors" in explore_raw and explore_raw["factors"] is not None:
        explore_raw["factors"] = _tuple2("explore.factors", explore_raw["factors"])

    hyperparams = None
    if raw.get("hyperparams") is not None:
        hyperparams = tuple(_hyperparam(e) for e in raw["hyperparams"])
        names = [h.name for h in hyperparams]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"hyperparams: duplicate hyperparameter name {dupes[0]!r}")

    if "initial_h" in raw and "initial_grid" in raw:
        raise ConfigError("give either initial_h or initial_grid, not both")
    initial_h = None
    if raw.get("initial_h") is not None:
        initial_h = tuple(dict(_mapping("initial_h entry", e)) for e in raw["initial_h"])
    elif raw.get("initial_grid") is not None:
        grid = _mapping("initial_grid", raw["initial_grid"])
        _reject_unknown("initial_grid", grid, GRID_KEYS)
        initial_h = grid_initial_h(_mapping("initial_grid.grid", grid.get("grid")), int(grid.get("replicas", 1)))

    suite = dict(_mapping("suite", raw.get("suite")))
    _reject_unknown("suite", suite, SUITE_KEYS)

    backend = raw.get("backend", "files")
    if backend not in ("files", "memory"):
        raise ConfigError(f"backend: unknown store backend {backend!r}")

    try:
        exploit = ExploitConfig(**exploit_raw)
    except ConfigError as exc:
        raise ConfigError(f"exploit: {exc}") from None
    try:
        explore = ExploreConfig(**explore_raw)
    except ConfigError as exc:
        raise ConfigError(f"explore: {exc}") from None

    experiment = ExperimentConfig(
        population_size=int(raw["population_size"]),
        total_steps=int(raw["total_steps"]),
        ready_interval=int(raw.get("ready_interval", 4)),
        eval_every=int(raw.get("eval_every", 1)),
        exploit=exploit,
        explore=explore,
        exploit_mask=raw.get("exploit_mask", "all"),
        mode=raw.get("mode", "serial"),
        seed=int(raw.get("seed", 0)),
        window_size=int(raw.get("window_size", 10)),
        quantum=None if raw.get("quantum") is None else int(raw["quantum"]),
        initial_h=initial_h,
        hyperparams=hyperparams,
    )
    try:
        TASKS[name](**task)
    except TypeError as exc:
        raise ConfigError(f"task: {exc}") from None
    return RunConfig(experiment, name, task, raw.get("out"), backend, suite)


def parse_config(path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw)


def _spec_to_dict(spec: HyperparamSpec) -> dict:
    d = {"name": spec.name, "prior": spec.prior.kind}
    if spec.prior.kind == "categorical":
        d["values"] = list(spec.prior.values)
    else:
        d["lo"], d["hi"] = spec.prior.lo, spec.prior.hi
    d.update(
        perturb_factors=list(spec.perturb_factors),
        resample_prob=spec.resample_prob,
        clamp_to_prior=spec.clamp_to_prior,
        integer=spec.integer,
    )
    return d


def resolved_dict(cfg: RunConfig) -> dict:
    """Fully explicit config; parsing it again yields an equal RunConfig."""
    e = cfg.experiment
    d = {
        "task": {"name": cfg.task, **cfg.task_constants},
        "population_size": e.population_size,
        "total_steps": e.total_steps,
        "ready_interval": e.ready_interval,
        "eval_every": e.eval_every,
        "window_size": e.window_size,
        "exploit": {
            "kind": e.exploit.kind,
            "truncation_fraction": e.exploit.truncation_fraction,
            "alpha": e.exploit.alpha,
        },
        "explore": {
            "kind": e.explore.kind,
            "factors": None if e.explore.factors is None else list(e.explore.factors),
            "sigma": e.explore.sigma,
            "resample_prob": e.explore.resample_prob,
        },
        "exploit_mask": e.exploit_mask,
        "mode": e.mode,
        "seed": e.seed,
        "quantum": e.quantum,
        "initial_h": None if e.initial_h is None else [dict(h) for h in e.initial_h],
        "hyperparams": None if e.hyperparams is None else [_spec_to_dict(s) for s in e.hyperparams],
        "out": cfg.out,
        "backend": cfg.backend,
        "suite": dict(cfg.suite),
    }
    return d


def dump_resolved(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(resolved_dict(cfg), fh, sort_keys=False)
