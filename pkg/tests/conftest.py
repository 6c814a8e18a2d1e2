import numpy as np
import pytest

from popbt.core import EvalWindow, ExperimentConfig, ExploitConfig, ExploreConfig, MemberState
from popbt.store import CheckpointRef, StoreSnapshot
from popbt.tasks import QuadraticToy

FIG2_H = ({"h0": 1.0, "h1": 0.0}, {"h0": 0.0, "h1": 1.0})


def fig2_config(**changes):
    cfg = ExperimentConfig(
        population_size=2,
        total_steps=100,
        ready_interval=4,
        eval_every=1,
        exploit=ExploitConfig("truncation", truncation_fraction=0.5),
        explore=ExploreConfig("gaussian", sigma=0.1),
        exploit_mask="weights-only",
        initial_h=FIG2_H,
    )
    return cfg.replace(**changes)


def member(i, p=float("-inf"), scores=(), h=None, theta=(0.0,), **kw):
    window = EvalWindow(10, tuple(scores))
    if scores and "p" not in kw and p == float("-inf"):
        p = scores[0]
    return MemberState(id=i, theta=np.array(theta, dtype=float), h=h or {"lr": 0.01}, p=p,
                       window=window, **kw)


def snapshot_of(members, failed=()):
    return StoreSnapshot(
        states={m.id: m for m in members},
        checkpoints={m.id: CheckpointRef(m.id, m.id + 1) for m in members},
        failed=frozenset(failed),
    )


@pytest.fixture
def toy():
    return QuadraticToy()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
