"""
Reading a run back from disk
============================

A run directory holds curves.csv, events.jsonl, checkpoints and the final
population. The analysis step rebuilds the tree of training segments and
exploit branches, and the hyperparameter schedule each final member's
weights actually went through.
"""

import tempfile
from pathlib import Path

from popbt import ExperimentConfig, NoisyQuadratic, run_experiment
from popbt.analysis import analyze_run, build_phylogeny, census_trajectory
from popbt.events import read_events

run_dir = Path(tempfile.mkdtemp(prefix="popbt-demo-"))
config = ExperimentConfig(population_size=8, total_steps=120, ready_interval=10, eval_every=5, seed=2)
run_experiment(config, NoisyQuadratic(noise=0.05), run_dir=run_dir, backend="files")
print(sorted(p.name for p in run_dir.iterdir()))

events = read_events(run_dir / "events.jsonl")
phylo = build_phylogeny(events)
print(len(phylo.nodes), "nodes,", len(phylo.roots), "roots, forest:", phylo.is_forest())

# distinct root ancestors among live members, sampled through the run
traj = census_trajectory(events)[config.population_size - 1:]
for i in range(0, len(traj), len(traj) // 6):
    print(f"event {i:4d}: {len(traj[i])} ancestors")

info = analyze_run(run_dir, top_k=5)
print("final members descend from:", info["roots"])
print((run_dir / "phylogeny.dot").read_text().splitlines()[:6])
print((run_dir / "lineages.csv").read_text().splitlines()[:4])
