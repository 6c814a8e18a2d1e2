import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from popbt.core import (
    ConfigError,
    EvalWindow,
    ExperimentConfig,
    ExploitConfig,
    ExploreConfig,
    HyperparamSpec,
    MemberState,
    Prior,
    as_param_vector,
    best,
    check_hyperparams,
    ready,
    record_eval,
)

from conftest import member


@pytest.mark.parametrize(
    "since, interval, expected",
    [(4, 4, True), (3, 4, False), (5000, 5000, True), (0, 1, False)],
)
def test_ready_examples(since, interval, expected):
    assert ready(member(0, steps_since_event=since), interval) is expected


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(1, 10_000))
def test_ready_is_monotone(a, extra, k):
    if ready(member(0, steps_since_event=a), k):
        assert ready(member(0, steps_since_event=a + extra), k)


def test_record_eval_empty_window():
    m = record_eval(member(0), 0.5)
    assert m.window.scores == (0.5,)
    assert m.p == 0.5
    assert m.version == 1


def test_record_eval_evicts_oldest_at_capacity():
    m = member(0, scores=tuple(float(i) for i in range(10)))
    out = record_eval(m, 1.0)
    assert len(out.window) == 10
    assert out.window.scores[0] == 1.0
    assert out.window.scores[1:] == m.window.scores[:9]
    assert out.p == 1.0


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_record_eval_rejects_non_finite(bad):
    with pytest.raises(ValueError, match="non-finite"):
        record_eval(member(0), bad)


@given(st.floats(-1e6, 1e6))
def test_record_eval_leaves_identity_fields(score):
    m = member(3, theta=(0.1, 0.2), t=7, ancestor_id=1)
    out = record_eval(m, score)
    assert np.array_equal(out.theta, m.theta)
    assert out.h == m.h and out.t == m.t and out.ancestor_id == m.ancestor_id
    assert out.p == out.window.scores[0]


def test_best_examples():
    pop = [member(i, p=p) for i, p in enumerate([0.5, 0.9, 0.2])]
    assert best(pop).id == 1
    assert best([member(0, p=0.9), member(1, p=0.9)]).id == 0
    assert best([member(4, p=-1.0)]).id == 4
    with pytest.raises(ValueError):
        best([])


def test_unevaluated_members_rank_last():
    assert best([member(0), member(1, p=-5.0)]).id == 1


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=12), st.randoms())
def test_best_is_max_and_permutation_invariant(ps, rnd):
    pop = [member(i, p=float(p)) for i, p in enumerate(ps)]
    chosen = best(pop)
    assert all(chosen.p >= m.p for m in pop)
    shuffled = list(pop)
    rnd.shuffle(shuffled)
    assert best(shuffled).id == chosen.id


@given(st.integers(1, 15), st.lists(st.floats(-10, 10), max_size=60))
def test_eval_window_never_exceeds_capacity(cap, pushes):
    w = EvalWindow(cap)
    for x in pushes:
        w = w.push(x)
        assert len(w) <= cap
    if pushes:
        assert w.scores[0] == pushes[-1]


def test_param_vector_rejects_nan():
    with pytest.raises(ValueError):
        as_param_vector([0.0, math.nan])
    v = as_param_vector([1, 2])
    assert v.dtype == np.float64 and not v.flags.writeable


def test_spec_invariants():
    with pytest.raises(ConfigError):
        Prior("uniform", 1.0, 0.5)
    with pytest.raises(ConfigError):
        Prior("log-uniform", 0.0, 1.0)
    with pytest.raises(ConfigError):
        HyperparamSpec("lr", Prior("uniform", 0, 1), perturb_factors=(0.8, 1.2))
    with pytest.raises(ConfigError):
        HyperparamSpec("lr", Prior("uniform", 0, 1), resample_prob=1.5)


def test_check_hyperparams():
    specs = [HyperparamSpec("lr", Prior("log-uniform", 1e-4, 1.0))]
    check_hyperparams({"lr": 0.1}, specs)
    with pytest.raises(ConfigError):
        check_hyperparams({"lr": -0.1}, specs)
    with pytest.raises(ConfigError):
        check_hyperparams({"lr": 0.1, "l2": 0.0}, specs)


def test_experiment_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(population_size=1, total_steps=10)
    ExperimentConfig(population_size=1, total_steps=10, baseline=True)
    with pytest.raises(ConfigError):
        ExperimentConfig(population_size=2, total_steps=10, ready_interval=0)
    with pytest.raises(ConfigError):
        ExploitConfig(truncation_fraction=0.7)
    with pytest.raises(ConfigError):
        ExploreConfig(factors=(0.9, 0.8))
    with pytest.raises(ConfigError):
        ExperimentConfig(population_size=2, total_steps=10, initial_h=({"a": 1},))
