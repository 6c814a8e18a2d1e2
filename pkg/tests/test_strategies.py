import math

import numpy as np
import pytest
from scipy.stats import binomtest

from popbt.core import ExploitConfig, ExploreConfig, HyperparamSpec, Prior
from popbt.stats import welch_t
from popbt.strategies import (
    binary_tournament,
    explore,
    perturb,
    rank_members,
    resample,
    sample_prior,
    select_source,
    truncation_select,
    truncation_sets,
    ttest_select,
)

from conftest import member, snapshot_of

LR = HyperparamSpec("lr", Prior("log-uniform", 1e-5, 5e-3))


# -- t-test selection ---------------------------------------------------------


def test_ttest_copies_significantly_better_candidate(rng):
    me = member(0, scores=tuple(float(i) for i in range(10)))
    other = member(1, scores=tuple(float(i) for i in range(5, 15)))
    assert ttest_select(me, snapshot_of([me, other]), 0.05, rng) == 1


def test_ttest_ignores_worse_or_identical_candidate(rng):
    me = member(0, scores=tuple(float(i) for i in range(5, 15)))
    worse = member(1, scores=tuple(float(i) for i in range(10)))
    assert ttest_select(me, snapshot_of([me, worse]), 0.05, rng) is None
    twin = member(1, scores=me.window.scores)
    assert ttest_select(me, snapshot_of([me, twin]), 0.05, rng) is None


def test_ttest_needs_two_scores_and_a_peer(rng):
    me = member(0, scores=(1.0,))
    other = member(1, scores=(5.0, 6.0, 7.0))
    assert ttest_select(me, snapshot_of([me, other]), 0.05, rng) is None
    assert ttest_select(me, snapshot_of([me]), 0.05, rng) is None


def brute_force_welch_decision(x, y, alpha):
    """Direct formulas plus a trapezoid integral of the t density."""
    nx, ny = len(x), len(y)
    mx, my = sum(x) / nx, sum(y) / ny
    if not my > mx:
        return False
    vx = sum((v - mx) ** 2 for v in x) / (nx - 1) / nx
    vy = sum((v - my) ** 2 for v in y) / (ny - 1) / ny
    if vx + vy == 0:
        return True
    t = (my - mx) / math.sqrt(vx + vy)
    df = (vx + vy) ** 2 / (vx**2 / (nx - 1) + vy**2 / (ny - 1))
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    s = np.linspace(t, t + 400.0, 400_001)
    dens = c * (1 + s * s / df) ** (-(df + 1) / 2)
    p = float(np.sum((dens[1:] + dens[:-1]) * np.diff(s)) / 2)
    return p < alpha


def test_ttest_agrees_with_brute_force():
    rng = np.random.default_rng(11)
    disagreements = 0
    for _ in range(1000):
        x = tuple(rng.normal(0, 1, 10).round(3))
        y = tuple(rng.normal(rng.uniform(-0.5, 1.5), rng.uniform(0.5, 2), 10).round(3))
        me, cand = member(0, scores=x), member(1, scores=y)
        got = ttest_select(me, snapshot_of([me, cand]), 0.05, rng) == 1
        p = welch_t(x, y).p_one_sided
        if abs(p - 0.05) < 1e-6:
            continue  # too close to the boundary for the quadrature
        disagreements += got != brute_force_welch_decision(x, y, 0.05)
    assert disagreements == 0


def test_ttest_excludes_self_and_failed():
    me = member(0, scores=(0.0, 0.1))
    good = member(1, scores=(9.0, 9.1))
    dead = member(2, scores=(100.0, 100.1))
    snap = snapshot_of([me, good, dead], failed=[2])
    rng = np.random.default_rng(0)
    picks = {ttest_select(me, snap, 0.05, rng) for _ in range(50)}
    assert picks == {1}


# -- truncation ---------------------------------------------------------------


def test_truncation_bottom_member_copies_from_top_two():
    pop = [member(i, p=float(10 - i)) for i in range(10)]  # id 9 is ranked 10th
    snap = snapshot_of(pop)
    rng = np.random.default_rng(0)
    picks = [truncation_select(pop[9], snap, 0.2, rng) for _ in range(200)]
    assert set(picks) == {0, 1}


def test_truncation_middle_member_does_nothing(rng):
    pop = [member(i, p=float(10 - i)) for i in range(10)]
    assert truncation_select(pop[4], snapshot_of(pop), 0.2, rng) is None


def test_truncation_ceil_rule():
    assert truncation_sets(5, 0.2) == 1
    assert truncation_sets(10, 0.2) == 2
    assert truncation_sets(10, 0.3) == 3
    assert truncation_sets(2, 0.05) == 1
    assert truncation_sets(2, 0.5) == 1


def test_truncation_ties_rank_lowest_id_first(rng):
    pop = [member(0, p=1.0), member(1, p=1.0)]
    snap = snapshot_of(pop)
    assert rank_members(snap) == [0, 1]
    assert truncation_select(pop[1], snap, 0.5, rng) == 0
    assert truncation_select(pop[0], snap, 0.5, rng) is None


@pytest.mark.parametrize("n", range(2, 21))
def test_truncation_exhaustive(n):
    rng = np.random.default_rng(n)
    scores = rng.permutation(n).astype(float)
    pop = [member(i, p=scores[i]) for i in range(n)]
    snap = snapshot_of(pop)
    for fraction in (0.1, 0.2, 0.25, 0.5):
        k = max(1, math.ceil(fraction * n - 1e-12))
        order = sorted(range(n), key=lambda i: (-scores[i], i))
        top, bottom = set(order[:k]), set(order[n - k:])
        for m in pop:
            for _ in range(3 * k):
                src = truncation_select(m, snap, fraction, rng)
                if m.id in bottom:
                    assert src in top
                else:
                    assert src is None


def test_truncation_single_member(rng):
    me = member(0, p=1.0)
    assert truncation_select(me, snapshot_of([me]), 0.2, rng) is None


# -- binary tournament --------------------------------------------------------


def test_tournament(rng):
    me = member(0, p=0.5)
    assert binary_tournament(me, snapshot_of([me, member(1, p=0.9)]), rng) == 1
    assert binary_tournament(me, snapshot_of([me, member(1, p=0.5)]), rng) is None
    assert binary_tournament(me, snapshot_of([me, member(1, p=0.1)]), rng) is None


def test_strategies_are_reproducible():
    pop = [member(i, p=float(i % 7), scores=(float(i), float(i) + 0.5)) for i in range(12)]
    snap = snapshot_of(pop)
    for cfg in (ExploitConfig("t-test"), ExploitConfig("truncation"), ExploitConfig("binary-tournament")):
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(99)
            runs.append([select_source(m, snap, cfg, rng) for m in pop])
        assert runs[0] == runs[1]


# -- explore ------------------------------------------------------------------


def test_perturb_factor_examples(rng):
    for _ in range(20):
        assert perturb({"lr": 0.001}, [LR], rng, (1.2, 0.8))["lr"] in (0.001 * 1.2, 0.001 * 0.8)
    wide = HyperparamSpec("lr", Prior("log-uniform", 1e-6, 1.0))
    for _ in range(20):
        assert perturb({"lr": 2e-4}, [wide], rng, (2.0, 0.5))["lr"] in (2e-4 * 2.0, 2e-4 * 0.5)
    assert perturb({"lr": 0.001}, [LR], rng, (1.0, 1.0)) == {"lr": 0.001}


def test_perturb_split_is_fair():
    spec = HyperparamSpec("x", Prior("uniform", 0.0, 100.0))
    rng = np.random.default_rng(2024)
    ups = sum(perturb({"x": 1.0}, [spec], rng, (1.2, 0.8))["x"] > 1.0 for _ in range(10_000))
    assert binomtest(ups, 10_000, 0.5).pvalue > 1e-3


def test_perturb_clamps_and_rounds(rng):
    spec = HyperparamSpec("lr", Prior("log-uniform", 1e-4, 1e-3))
    assert perturb({"lr": 1e-3}, [spec], rng, (2.0, 2.0))["lr"] == 1e-3
    unroll = HyperparamSpec("unroll", Prior("uniform", 5, 50), integer=True)
    for _ in range(20):
        v = perturb({"unroll": 20}, [unroll], rng, (1.2, 0.8))["unroll"]
        assert v in (16, 24)
    assert perturb({"unroll": 5}, [unroll], rng, (0.5, 0.5))["unroll"] == 5


def test_perturb_categorical_redraws(rng):
    spec = HyperparamSpec("opt", Prior("categorical", values=("sgd", "adam", "rms")))
    seen = {perturb({"opt": "sgd"}, [spec], rng)["opt"] for _ in range(100)}
    assert seen == {"sgd", "adam", "rms"}


def test_resample_examples(rng):
    assert resample({"lr": 0.001}, [LR], rng, prob=0.0) == {"lr": 0.001}
    for _ in range(100):
        v = resample({"lr": 0.001}, [LR], rng, prob=1.0)["lr"]
        assert 1e-5 <= v <= 5e-3
    unroll = HyperparamSpec("unroll", Prior("categorical", values=tuple(range(5, 51))))
    for _ in range(100):
        assert resample({"unroll": 20}, [unroll], rng, prob=1.0)["unroll"] in range(5, 51)


def test_sample_prior(rng):
    assert sample_prior(HyperparamSpec("lr", Prior("log-uniform", 1e-4, 1e-4)), rng) == 1e-4
    u = [sample_prior(HyperparamSpec("u", Prior("uniform", 0.0, 1.0)), rng) for _ in range(10_000)]
    assert abs(np.mean(u) - 0.5) < 0.02
    draws = [sample_prior(LR, rng) for _ in range(10_000)]
    assert min(draws) >= 1e-5 and max(draws) <= 5e-3


def test_explore_dispatch(rng):
    h = {"lr": 0.001}
    assert explore(h, [LR], ExploreConfig("none"), rng) == h
    out = explore(h, [LR], ExploreConfig("gaussian", sigma=0.0), rng)
    assert out == h
    g = HyperparamSpec("h0", Prior("uniform", 0.0, 1.0))
    for _ in range(50):
        v = explore({"h0": 1.0}, [g], ExploreConfig("gaussian", sigma=0.1), rng)["h0"]
        assert 0.0 <= v <= 1.0
