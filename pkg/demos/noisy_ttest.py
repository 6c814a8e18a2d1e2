"""
Choosing a learning rate under noisy evaluations
================================================

Members run gradient descent on a quadratic bowl and are scored with
gaussian noise. Copying only when a Welch t-test over the last 10 scores
says the other member is better avoids chasing lucky evaluations.
"""

import numpy as np

from popbt import ExperimentConfig, ExploitConfig, ExploreConfig, NoisyQuadratic, run_experiment
from popbt.analysis import aggregate_curves, extract_lineages

task = NoisyQuadratic(noise=0.05)
print("learning rates above", task.stable_lr_bound, "diverge")

config = ExperimentConfig(
    population_size=10,
    total_steps=200,
    ready_interval=20,
    eval_every=5,
    exploit=ExploitConfig("t-test", alpha=0.05),
    explore=ExploreConfig("perturb", factors=(1.2, 0.8)),
    seed=1,
)
report = run_experiment(config, task)

kinds = [e.kind for e in report.events]
print("exploits:", kinds.count("exploit"), " explores:", kinds.count("explore"),
      " failures:", len(report.failures))

# mean of the five best members over time
table = aggregate_curves(report, top_k=5)
for step, mean in list(zip(table.steps, table.top_k_mean))[::8]:
    print(f"t={step:3d}  top-5 mean score {mean:+.5f}")

# the learning rate schedule followed by the winning weights
lineage = extract_lineages(report.events)[report.best.id]
for t, h in lineage[::10]:
    print(f"t={t:3d}  lr={h['lr']:.4f}")

# single noisy scores say little; compare the noise-free objective of the
# final members against the same population with fixed learning rates
fixed = run_experiment(config.replace(exploit=ExploitConfig("none"), explore=ExploreConfig("none")), task)


def true_loss(rep):
    return np.median([task.objective(m.theta) for m in rep.final_population if m.id not in rep.failures])


print(f"median true loss, pbt {true_loss(report):.3g} vs fixed {true_loss(fixed):.3g}")
print("fixed lrs:", np.round(sorted(m.h["lr"] for m in fixed.final_population), 3))
print("pbt lrs:  ", np.round(sorted(m.h["lr"] for m in report.final_population), 3))
