"""The population training loop and experiment drivers.

Each member repeatedly steps, evaluates and publishes; when ready it asks
the configured exploit strategy for a better member, copies from that
member's checkpoint, explores the hyperparameters and re-evaluates.

Three execution modes share the same per-member logic:

``serial``
    members advance one step at a time in round-robin order; fully
    reproducible from the seed.
``async``
    one thread per member, interacting only through the store.
``partial-sync``
    members advance a fixed quantum of steps in parallel, then exploit and
    explore happens for every ready member against one coherent snapshot.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import strategies
from .core import (
    ExperimentConfig,
    ExploitConfig,
    ExploreConfig,
    MemberState,
    EvalWindow,
    best,
    check_hyperparams,
    ready,
    record_eval,
)
from .events import LineageEvent, write_events
from .store import Checkpoint, DirectoryStore, PopulationStore
from .tasks import Task

log = logging.getLogger(__name__)

ABLATIONS = (
    "exploit-only",
    "explore-only",
    "hyperparams-only",
    "weights-only",
    "population-size-sweep",
    "final-h-replay",
)


class ExperimentFailed(RuntimeError):
    def __init__(self, message: str, report: Optional["RunReport"] = None):
        super().__init__(message)
        self.report = report


class RngLedger:
    """Independent random streams keyed by (member id, purpose).

    Each stream is seeded from ``SeedSequence(seed, spawn_key=(member,
    purpose))`` so a member's draws do not depend on how other members are
    scheduled.
    """

    PURPOSES = ("init", "hparams", "step", "eval", "exploit", "explore")

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[tuple, np.random.Generator] = {}
        self.calls: Counter = Counter()
        self._lock = threading.Lock()

    def stream(self, member_id: int, purpose: str) -> np.random.Generator:
        key = (member_id, purpose)
        with self._lock:
            self.calls[key] += 1
            gen = self._streams.get(key)
            if gen is None:
                ss = np.random.SeedSequence(self.seed, spawn_key=(member_id, self.PURPOSES.index(purpose)))
                gen = self._streams[key] = np.random.default_rng(ss)
            return gen


@dataclass
class RunReport:
    config: ExperimentConfig
    hyperparam_names: tuple
    curves: List[tuple]  # (step, member_id, p, h)
    final_population: List[MemberState]
    best: Optional[MemberState]
    events: List[LineageEvent]
    failures: Dict[int, str] = field(default_factory=dict)
    wall_time: float = 0.0
    run_dir: Optional[Path] = None

    @property
    def best_score(self) -> float:
        return self.best.p if self.best is not None else float("-inf")


def hyperparam_specs(config: ExperimentConfig, task: Task):
    return tuple(config.hyperparams) if config.hyperparams else tuple(task.hyperparam_specs)


def grid_initial_h(grid: Dict[str, Sequence], replicas: int = 1) -> tuple:
    """Cross product of per-hyperparameter value lists, repeated ``replicas`` times."""
    names = list(grid)
    settings = [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]
    return tuple(dict(s) for s in settings for _ in range(replicas))


def init_population(config: ExperimentConfig, task: Task, ledger: Optional[RngLedger] = None) -> List[MemberState]:
    if config.population_size < 1:
        raise ValueError("population must have at least one member")
    ledger = ledger or RngLedger(config.seed)
    specs = hyperparam_specs(config, task)
    members = []
    for i in range(config.population_size):
        theta = task.init(ledger.stream(i, "init"))
        if config.initial_h is not None:
            h = dict(config.initial_h[i])
        else:
            rng = ledger.stream(i, "hparams")
            h = {s.name: strategies.sample_prior(s, rng) for s in specs}
        check_hyperparams(h, specs)
        members.append(MemberState(id=i, theta=theta, h=h, window=EvalWindow(config.window_size)))
    return members


class Worker:
    """Owns one member's state between store events."""

    def __init__(self, state: MemberState, task: Task, config: ExperimentConfig,
                 store: PopulationStore, ledger: RngLedger, specs):
        self.state = state
        self.task = task
        self.config = config
        self.store = store
        self.ledger = ledger
        self.specs = specs
        self.curve: Dict[int, tuple] = {}
        self.failed = False
        self._rng = {p: ledger.stream(state.id, p) for p in ("step", "eval", "exploit", "explore")}

    @property
    def id(self) -> int:
        return self.state.id

    @property
    def done(self) -> bool:
        return self.failed or self.state.t >= self.config.total_steps

    def _record_curve(self) -> None:
        s = self.state
        self.curve[s.t] = (s.t, s.id, s.p, dict(s.h))

    def evaluate(self, parent_member_id: Optional[int] = None) -> None:
        score = self.task.eval(self.state.theta, self._rng["eval"])
        self.state = record_eval(self.state, score)
        self.store.commit(self.state, parent_member_id=parent_member_id)
        self._record_curve()

    def step(self) -> bool:
        """One training step; returns True if it ended with an eval."""
        s = self.state
        theta = self.task.step(s.theta, s.h, self._rng["step"])
        self.state = s.evolve(theta=theta, t=s.t + 1, steps_since_event=s.steps_since_event + 1)
        if self.state.t % self.config.eval_every == 0 or self.state.t == self.config.total_steps:
            self.evaluate()
            return True
        return False

    def advance(self) -> None:
        if self.step() and ready(self.state, self.config.ready_interval):
            self.exploit_and_explore(self.choose_source(self.store.snapshot()))

    def choose_source(self, snapshot) -> Optional[int]:
        """Ready attempt: resets the ready counter and picks an exploit source id."""
        self.state = self.state.evolve(steps_since_event=0)
        cfg = self.config
        if cfg.exploit.kind == "none" or cfg.exploit_mask == "none":
            return None
        return strategies.select_source(self.state, snapshot, cfg.exploit, self._rng["exploit"])

    def exploit_and_explore(self, src: Union[int, Checkpoint, None]) -> None:
        """Copy from ``src`` (a member id, meaning its current checkpoint, or
        a checkpoint already loaded), explore, and re-evaluate."""
        cfg = self.config
        if src is None:
            if cfg.exploit.kind == "none" and cfg.explore.kind != "none":
                self._explore()
                self._record_curve()
            return
        if isinstance(src, Checkpoint):
            self.state = self.store.exploit_copy(self.id, src, cfg.exploit_mask)
        else:
            copied = self.store.exploit_latest(self.id, src, cfg.exploit_mask)
            if copied is None:  # source failed after it was selected
                return
            self.state, src = copied
        self._explore()
        self.evaluate(parent_member_id=src.member_id)

    def _explore(self) -> None:
        if self.config.explore.kind == "none":
            return
        before = dict(self.state.h)
        after = strategies.explore(before, self.specs, self.config.explore, self._rng["explore"])
        self.state = self.state.evolve(h=after, steps_since_event=0)
        self.store.log_event("explore", self.state, h_before=before, h_after=dict(after))


def run_member_loop(worker: Worker) -> None:
    """Drive one member until it reaches ``total_steps`` or fails."""
    while not worker.done:
        _guarded(worker, worker.advance)


def _guarded(worker: Worker, fn, *args) -> None:
    try:
        fn(*args)
    except Exception as exc:  # any task failure kills only this member
        worker.failed = True
        worker.store.mark_failed(worker.id, f"{type(exc).__name__}: {exc}")


def _run_serial(workers: List[Worker]) -> None:
    while True:
        live = [w for w in workers if not w.done]
        if not live:
            return
        for w in live:
            if not w.done:
                _guarded(w, w.advance)


def _run_async(workers: List[Worker]) -> None:
    threads = [threading.Thread(target=run_member_loop, args=(w,), name=f"member-{w.id}") for w in workers]
    for th in threads:
        th.start()
    for th in threads:
        th.join()


def _run_partial_sync(workers: List[Worker], store: PopulationStore, config: ExperimentConfig) -> None:
    quantum = config.sync_quantum

    def advance_quantum(w: Worker) -> None:
        target = min(w.state.t + quantum, config.total_steps)
        while not w.done and w.state.t < target:
            _guarded(w, w.step)
        # ready decisions at the barrier need a score for the current step
        if not w.failed and w.state.t not in w.curve:
            _guarded(w, w.evaluate)

    with ThreadPoolExecutor(max_workers=len(workers)) as pool:
        while any(not w.done for w in workers):
            list(pool.map(advance_quantum, [w for w in workers if not w.done]))
            snapshot = store.snapshot()
            # decide every source before any copy so all see the same snapshot
            plans = []
            for w in workers:
                if not w.failed and ready(w.state, config.ready_interval):
                    try:
                        src_id = w.choose_source(snapshot)
                        ckpt = None if src_id is None else store.load_checkpoint(snapshot.checkpoints[src_id])
                    except Exception as exc:
                        w.failed = True
                        store.mark_failed(w.id, f"{type(exc).__name__}: {exc}")
                        continue
                    plans.append((w, ckpt))
            # a source always scores higher than its copier, so applying the
            # lowest scorers first copies every source before it is overwritten
            plans.sort(key=lambda plan: (plan[0].state.p, plan[0].id))
            for w, ckpt in plans:
                _guarded(w, w.exploit_and_explore, ckpt)


def run_experiment(config: ExperimentConfig, task: Task, run_dir: Union[str, Path, None] = None,
                   backend: str = "memory") -> RunReport:
    """Train a population under ``config`` and return the run report.

    With ``run_dir`` set, artifacts (curves.csv, events.jsonl,
    final_population.json, best.json) are written there; ``backend="files"``
    additionally keeps checkpoints on disk under ``run_dir/checkpoints``.
    """
    started = time.perf_counter()
    ledger = RngLedger(config.seed)
    specs = hyperparam_specs(config, task)
    members = init_population(config, task, ledger)
    run_dir = Path(run_dir) if run_dir is not None else None
    if backend == "files":
        if run_dir is None:
            raise ValueError("the files backend needs a run directory")
        store = DirectoryStore(members, run_dir)
    elif backend == "memory":
        store = PopulationStore(members)
    else:
        raise ValueError(f"unknown store backend {backend!r}")

    workers = [Worker(m, task, config, store, ledger, specs) for m in members]
    try:
        if config.mode == "serial":
            _run_serial(workers)
        elif config.mode == "async":
            _run_async(workers)
        else:
            _run_partial_sync(workers, store, config)
    finally:
        if isinstance(store, DirectoryStore):
            store.close()

    final = [w.state for w in workers]
    failures = store.failures
    alive = [w.state for w in workers if not w.failed]
    curves = sorted(
        (row for w in workers for row in w.curve.values()),
        key=lambda r: (r[0], r[1]),
    )
    report = RunReport(
        config=config,
        hyperparam_names=tuple(s.name for s in specs),
        curves=curves,
        final_population=final,
        best=best(alive) if alive else None,
        events=store.events,
        failures=failures,
        wall_time=time.perf_counter() - started,
        run_dir=run_dir,
    )
    if run_dir is not None:
        write_artifacts(report, run_dir, events_written=store.writes_events)
    if len(failures) * 2 > config.population_size:
        raise ExperimentFailed(
            f"{len(failures)} of {config.population_size} members failed", report
        )
    return report


def run_random_search_baseline(config: ExperimentConfig, task: Task, **kwargs) -> RunReport:
    """Same population with exploit and explore switched off."""
    cfg = config.replace(exploit=ExploitConfig(kind="none"), explore=ExploreConfig(kind="none"),
                         baseline=True)
    return run_experiment(cfg, task, **kwargs)


def ablation_config(config: ExperimentConfig, variant: str) -> ExperimentConfig:
    if variant == "exploit-only":
        return config.replace(explore=ExploreConfig(kind="none"))
    if variant == "explore-only":
        return config.replace(exploit=ExploitConfig(kind="none"))
    if variant == "hyperparams-only":
        return config.replace(exploit_mask="hyperparams-only")
    if variant == "weights-only":
        # weights are selected and copied; hyperparameters are neither copied nor explored
        return config.replace(exploit_mask="weights-only", explore=ExploreConfig(kind="none"))
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(config: ExperimentConfig, task: Task, variant: str,
                 population_sizes: Sequence[int] = (10, 20, 40, 80), **kwargs):
    """Run one ablation variant.

    Returns a :class:`RunReport`, except for ``population-size-sweep``
    (dict of N -> report) and ``final-h-replay`` (dict with ``"pbt"`` and
    ``"replay"`` reports).
    """
    if variant not in ABLATIONS:
        raise ValueError(f"unknown ablation variant {variant!r}; choose from {ABLATIONS}")
    if variant == "population-size-sweep":
        return {
            n: run_experiment(config.replace(population_size=n, initial_h=None), task, **kwargs)
            for n in population_sizes
        }
    if variant == "final-h-replay":
        pbt = run_experiment(config, task, **kwargs)
        final_h = tuple(dict(m.h) for m in pbt.final_population)
        replay = run_random_search_baseline(config.replace(initial_h=final_h), task, **kwargs)
        return {"pbt": pbt, "replay": replay}
    return run_experiment(ablation_config(config, variant), task, **kwargs)


# -- artifacts ---------------------------------------------------------------


def _num(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def member_to_dict(m: MemberState) -> dict:
    return {
        "id": m.id,
        "t": m.t,
        "p": _jsonable_float(m.p),
        "h": {k: m.h[k] for k in sorted(m.h)},
        "theta": [float(x) for x in m.theta],
        "ancestor_id": m.ancestor_id,
        "version": m.version,
        "window": [float(x) for x in m.window.scores],
    }


def _jsonable_float(x: float):
    return x if math.isfinite(x) else repr(x)


def write_curves(report: RunReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "member_id", "p", *report.hyperparam_names])
        for step, mid, p, h in report.curves:
            writer.writerow([step, mid, _num(p), *(_num(h[n]) for n in report.hyperparam_names)])


def write_artifacts(report: RunReport, run_dir: Path, events_written: bool = False) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_curves(report, run_dir / "curves.csv")
    if not events_written:
        write_events(run_dir / "events.jsonl", report.events)
    final = {
        "members": [member_to_dict(m) for m in report.final_population],
        "failed": {str(k): v for k, v in sorted(report.failures.items())},
    }
    (run_dir / "final_population.json").write_text(json.dumps(final, indent=2, sort_keys=True) + "\n")
    best_doc = member_to_dict(report.best) if report.best is not None else None
    (run_dir / "best.json").write_text(json.dumps(best_doc, indent=2, sort_keys=True) + "\n")
