"""Domain types shared across the package and the elementary predicates of
the training loop (``ready``, ``record_eval``, ``best``).

All types here are immutable values. State changes produce new instances via
:func:`dataclasses.replace`; the only shared mutable object in a run is the
population store.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

HValue = Union[float, int, str]
HyperparamVector = dict  # name -> HValue; kept as a plain dict alias

NEG_INF = float("-inf")

PRIOR_KINDS = ("log-uniform", "uniform", "categorical")
EXPLOIT_MASKS = ("all", "hyperparams-only", "weights-only", "none")
MODES = ("serial", "async", "partial-sync")


class ConfigError(ValueError):
    """Raised for invalid specs or experiment configuration."""


def as_param_vector(values: Sequence[float]) -> np.ndarray:
    """Return a read-only float64 copy of ``values``; rejects NaN/Inf."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Prior:
    kind: str
    lo: Optional[float] = None
    hi: Optional[float] = None
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.values:
                raise ConfigError("categorical prior needs at least one value")
            return
        if self.lo is None or self.hi is None:
            raise ConfigError(f"{self.kind} prior needs lo and hi")
        # Degenerate lo == hi is allowed (a fixed value); lo > hi is not.
        if self.lo > self.hi:
            raise ConfigError(f"prior lo={self.lo} exceeds hi={self.hi}")
        if self.kind == "log-uniform" and self.lo <= 0:
            raise ConfigError("log-uniform prior needs lo > 0")

    @property
    def bounded(self) -> bool:
        return self.kind != "categorical"


@dataclass(frozen=True)
class HyperparamSpec:
    """Prior and explore settings for one named hyperparameter.

    ``integer`` marks hyperparameters such as unroll length; they are
    perturbed in real space and rounded to the nearest integer.
    """

    name: str
    prior: Prior
    perturb_factors: tuple = (1.2, 0.8)
    resample_prob: float = 0.25
    clamp_to_prior: bool = True
    integer: bool = False

    def __post_init__(self):
        up, down = self.perturb_factors
        if not (up >= down > 0):
            raise ConfigError(
                f"{self.name}: perturb factors must satisfy up >= down > 0, got {self.perturb_factors}"
            )
        if not 0.0 <= self.resample_prob <= 1.0:
            raise ConfigError(f"{self.name}: resample_prob must lie in [0, 1]")


def check_hyperparams(h: Mapping[str, HValue], specs: Sequence[HyperparamSpec]) -> None:
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate hyperparameter names in {names}")
    if set(h) != set(names):
        raise ConfigError(f"hyperparameter keys {sorted(h)} do not match specs {sorted(names)}")
    for s in specs:
        v = h[s.name]
        if s.prior.kind == "categorical":
            continue
        if not math.isfinite(v):
            raise ConfigError(f"{s.name} is not finite")
        if s.prior.kind == "log-uniform" and v <= 0:
            raise ConfigError(f"{s.name} must be positive under a log-uniform prior")


@dataclass(frozen=True)
class EvalWindow:
    """Most-recent-first window of eval scores."""

    capacity: int = 10
    scores: tuple = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("window capacity must be positive")
        if len(self.scores) > self.capacity:
            raise ValueError("window holds more scores than its capacity")

    def push(self, score: float) -> "EvalWindow":
        return EvalWindow(self.capacity, ((score,) + self.scores)[: self.capacity])

    def cleared(self) -> "EvalWindow":
        return EvalWindow(self.capacity)

    def __len__(self) -> int:
        return len(self.scores)

    def mean(self) -> float:
        return float(np.mean(self.scores)) if self.scores else NEG_INF


@dataclass(frozen=True, eq=False)
class MemberState:
    """One population member: weights ``theta``, hyperparameters ``h``,
    latest score ``p`` and step counter ``t`` plus lineage bookkeeping."""

    id: int
    theta: np.ndarray
    h: dict
    p: float = NEG_INF
    t: int = 0
    window: EvalWindow = field(default_factory=EvalWindow)
    steps_since_event: int = 0
    ancestor_id: int = -1
    version: int = 0

    def __post_init__(self):
        if self.ancestor_id == -1:
            object.__setattr__(self, "ancestor_id", self.id)
        if self.t < 0 or self.steps_since_event < 0:
            raise ValueError("step counters must be non-negative")

    def same_as(self, other: "MemberState") -> bool:
        return (
            self.id == other.id
            and np.array_equal(self.theta, other.theta)
            and self.h == other.h
            and _same_float(self.p, other.p)
            and self.t == other.t
            and self.window == other.window
            and self.steps_since_event == other.steps_since_event
            and self.ancestor_id == other.ancestor_id
            and self.version == other.version
        )

    def evolve(self, **changes) -> "MemberState":
        return dataclasses.replace(self, **changes)


def _same_float(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


@dataclass(frozen=True)
class ExploitConfig:
    kind: str = "truncation"
    truncation_fraction: float = 0.2
    alpha: float = 0.05

    KINDS = ("t-test", "truncation", "binary-tournament", "none")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown exploit kind {self.kind!r}")
        if not 0.0 < self.truncation_fraction <= 0.5:
            raise ConfigError("truncation_fraction must lie in (0, 0.5]")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class ExploreConfig:
    """``factors=None`` defers to each hyperparameter's own perturb factors."""

    kind: str = "perturb"
    factors: Optional[tuple] = (1.2, 0.8)
    sigma: float = 0.1
    resample_prob: Optional[float] = None

    KINDS = ("perturb", "resample", "gaussian", "none")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown explore kind {self.kind!r}")
        if self.factors is not None:
            up, down = self.factors
            if not (up >= 1.0 >= down > 0):
                raise ConfigError(f"perturb factors must satisfy up >= 1 >= down > 0, got {self.factors}")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.resample_prob is not None and not 0.0 <= self.resample_prob <= 1.0:
            raise ConfigError("resample_prob must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    population_size: int
    total_steps: int
    ready_interval: int = 4
    eval_every: int = 1
    exploit: ExploitConfig = field(default_factory=ExploitConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    exploit_mask: str = "all"
    mode: str = "serial"
    seed: int = 0
    window_size: int = 10
    quantum: Optional[int] = None
    initial_h: Optional[tuple] = None
    hyperparams: Optional[tuple] = None
    baseline: bool = False

    def __post_init__(self):
        if self.population_size < 1:
            raise ConfigError("population_size must be positive")
        if self.population_size < 2 and not self.baseline and self.exploit.kind != "none":
            raise ConfigError("population_size must be at least 2 unless running a baseline")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be positive")
        if self.ready_interval < 1:
            raise ConfigError("ready_interval must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.exploit_mask not in EXPLOIT_MASKS:
            raise ConfigError(f"unknown exploit_mask {self.exploit_mask!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.window_size < 1:
            raise ConfigError("window_size must be positive")
        if self.quantum is not None and self.quantum < 1:
            raise ConfigError("quantum must be positive")
        if self.initial_h is not None and len(self.initial_h) != self.population_size:
            raise ConfigError(
                f"initial_h lists {len(self.initial_h)} settings for a population of {self.population_size}"
            )

    @property
    def sync_quantum(self) -> int:
        return self.quantum or self.ready_interval

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def ready(member: MemberState, ready_interval: int) -> bool:
    """True once ``ready_interval`` steps have passed since the last exploit/explore."""
    return member.steps_since_event >= ready_interval


def record_eval(member: MemberState, score: float) -> MemberState:
    score = float(score)
    if not math.isfinite(score):
        raise ValueError(f"member {member.id}: eval returned non-finite score {score!r}")
    return member.evolve(window=member.window.push(score), p=score, version=member.version + 1)


def best(population: Sequence[MemberState]) -> MemberState:
    """Member with the highest ``p``; ties go to the lowest id."""
    if not population:
        raise ValueError("best() of an empty population")
    for m in population:
        if math.isnan(m.p):
            raise ValueError(f"member {m.id} has NaN score")
    return min(population, key=lambda m: (-m.p, m.id))
