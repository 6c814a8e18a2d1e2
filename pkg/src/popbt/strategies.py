"""Exploit and explore strategies.

Exploit strategies look at a store snapshot and return the id of a member to
copy from, or ``None``. Explore strategies map a hyperparameter dict to a new
one. Every function draws randomness only from the ``rng`` it is given.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    ExploitConfig,
    ExploreConfig,
    HyperparamSpec,
    MemberState,
)
from .stats import welch_t


def _candidates(self_id: int, snapshot) -> list:
    return [i for i in sorted(snapshot.states) if i != self_id and i not in snapshot.failed]


def _sample_other(self_id: int, snapshot, rng: np.random.Generator) -> Optional[int]:
    others = _candidates(self_id, snapshot)
    if not others:
        return None
    return others[int(rng.integers(len(others)))]


def ttest_select(self: MemberState, snapshot, alpha: float, rng: np.random.Generator) -> Optional[int]:
    """Copy from a uniformly sampled member if its recent scores are
    significantly higher (one-sided Welch test at level ``alpha``)."""
    other = _sample_other(self.id, snapshot, rng)
    if other is None:
        return None
    cand = snapshot.states[other]
    if len(self.window) < 2 or len(cand.window) < 2:
        return None
    if not cand.window.mean() > self.window.mean():
        return None
    res = welch_t(self.window.scores, cand.window.scores)
    return other if res.p_one_sided < alpha else None


def rank_members(snapshot, exclude_failed: bool = True) -> list:
    """Member ids ordered best first: p descending, ties by lowest id."""
    ids = [i for i in snapshot.states if not (exclude_failed and i in snapshot.failed)]
    return sorted(ids, key=lambda i: (-snapshot.states[i].p, i))


def truncation_sets(n: int, fraction: float) -> int:
    """Size of the top and bottom sets: ceil(fraction * n), at least 1."""
    return max(1, math.ceil(fraction * n - 1e-12))


def truncation_select(self: MemberState, snapshot, fraction: float, rng: np.random.Generator) -> Optional[int]:
    ranked = rank_members(snapshot)
    n = len(ranked)
    if n < 2 or self.id not in ranked:
        return None
    k = truncation_sets(n, fraction)
    if self.id not in ranked[n - k:]:
        return None
    top = ranked[:k]
    return top[int(rng.integers(len(top)))]


def binary_tournament(self: MemberState, snapshot, rng: np.random.Generator) -> Optional[int]:
    other = _sample_other(self.id, snapshot, rng)
    if other is None:
        return None
    return other if snapshot.states[other].p > self.p else None


def select_source(self: MemberState, snapshot, config: ExploitConfig, rng: np.random.Generator) -> Optional[int]:
    if config.kind == "t-test":
        return ttest_select(self, snapshot, config.alpha, rng)
    if config.kind == "truncation":
        return truncation_select(self, snapshot, config.truncation_fraction, rng)
    if config.kind == "binary-tournament":
        return binary_tournament(self, snapshot, rng)
    return None


# -- explore -----------------------------------------------------------------


def sample_prior(spec: HyperparamSpec, rng: np.random.Generator):
    prior = spec.prior
    if prior.kind == "categorical":
        return prior.values[int(rng.integers(len(prior.values)))]
    if prior.kind == "log-uniform":
        value = float(math.exp(rng.uniform(math.log(prior.lo), math.log(prior.hi))))
        # exp(log(x)) can drift by an ulp; keep draws inside the support.
        value = min(max(value, prior.lo), prior.hi)
    else:
        value = float(rng.uniform(prior.lo, prior.hi))
    return _finish_numeric(spec, value, clamp=False)


def _finish_numeric(spec: HyperparamSpec, value: float, clamp: bool):
    prior = spec.prior
    if clamp and spec.clamp_to_prior and prior.bounded:
        value = min(max(value, prior.lo), prior.hi)
    if spec.integer:
        value = max(int(round(value)), int(math.ceil(prior.lo)))
    return value


def perturb(
    h: Mapping,
    specs: Sequence[HyperparamSpec],
    rng: np.random.Generator,
    factors: Optional[tuple] = None,
) -> dict:
    """Scale every numeric hyperparameter by the up or down factor with
    equal probability. Categorical values are re-drawn with probability 1/2."""
    out = dict(h)
    for spec in specs:
        if spec.prior.kind == "categorical":
            if rng.random() < 0.5:
                out[spec.name] = sample_prior(spec, rng)
            continue
        up, down = factors if factors is not None else spec.perturb_factors
        factor = up if rng.random() < 0.5 else down
        out[spec.name] = _finish_numeric(spec, float(h[spec.name]) * factor, clamp=True)
    return out


def resample(
    h: Mapping,
    specs: Sequence[HyperparamSpec],
    rng: np.random.Generator,
    prob: Optional[float] = None,
) -> dict:
    out = dict(h)
    for spec in specs:
        q = spec.resample_prob if prob is None else prob
        if rng.random() < q:
            out[spec.name] = sample_prior(spec, rng)
    return out


def additive_gaussian(h: Mapping, specs: Sequence[HyperparamSpec], rng: np.random.Generator, sigma: float) -> dict:
    """Add N(0, sigma^2) noise to numeric hyperparameters, then clamp to the
    prior support. Unlike ``perturb`` this can move a zero coordinate."""
    out = dict(h)
    for spec in specs:
        if spec.prior.kind == "categorical":
            continue
        noise = float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0
        out[spec.name] = _finish_numeric(spec, float(h[spec.name]) + noise, clamp=True)
    return out


def explore(h: Mapping, specs: Sequence[HyperparamSpec], config: ExploreConfig, rng: np.random.Generator) -> dict:
    if config.kind == "perturb":
        return perturb(h, specs, rng, config.factors)
    if config.kind == "resample":
        return resample(h, specs, rng, config.resample_prob)
    if config.kind == "gaussian":
        return additive_gaussian(h, specs, rng, config.sigma)
    return dict(h)
