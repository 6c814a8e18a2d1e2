"""Command line runner: ``popbt run``, ``popbt suite`` and ``popbt analyze``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .analysis import analyze_run
from .config import RunConfig, dump_resolved, parse_config
from .core import ConfigError
from .engine import (
    ExperimentFailed,
    run_ablation,
    run_experiment,
    run_random_search_baseline,
)

log = logging.getLogger("popbt")

SUITES = ("fig2", "ablations", "popsize")


def _with_overrides(cfg: RunConfig, seed=None, mode=None, out=None) -> RunConfig:
    exp = cfg.experiment
    if seed is not None:
        exp = exp.replace(seed=seed)
    if mode is not None:
        exp = exp.replace(mode=mode)
    return dataclasses.replace(cfg, experiment=exp, out=out if out is not None else cfg.out)


def _run_dir(cfg: RunConfig, kind: str) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return Path("runs") / f"{cfg.task}-{kind}-seed{cfg.experiment.seed}"


def cmd_run(cfg: RunConfig) -> int:
    run_dir = _run_dir(cfg, "run")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "FAILED").unlink(missing_ok=True)
    dump_resolved(cfg, run_dir / "resolved_config.yaml")
    try:
        report = run_experiment(cfg.experiment, cfg.make_task(), run_dir=run_dir, backend=cfg.backend)
    except Exception as exc:
        (run_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")
        log.error("run failed: %s", exc)
        return 1
    print(f"best member {report.best.id}: p={report.best.p!r} (t={report.best.t}); artifacts in {run_dir}")
    return 0


def _suite_variants(cfg: RunConfig, suite: str):
    """Yield (variant name, callable(ExperimentConfig) -> final best score)."""
    task = cfg.make_task()

    def pbt(c):
        return run_experiment(c, task).best_score

    if suite == "fig2":
        return [
            ("pbt", pbt),
            ("exploit-only", lambda c: run_ablation(c, task, "exploit-only").best_score),
            ("explore-only", lambda c: run_ablation(c, task, "explore-only").best_score),
            ("grid", lambda c: run_random_search_baseline(c, task).best_score),
        ]
    if suite == "ablations":
        return [
            ("pbt", pbt),
            ("hyperparams-only", lambda c: run_ablation(c, task, "hyperparams-only").best_score),
            ("weights-only", lambda c: run_ablation(c, task, "weights-only").best_score),
            ("final-h-replay", lambda c: run_ablation(c, task, "final-h-replay")["replay"].best_score),
        ]
    sizes = cfg.suite.get("population_sizes", [10, 20, 40, 80])
    out = []
    for n in sizes:
        def resized(c, n=n):
            return c.replace(population_size=n, initial_h=None)
        out.append((f"pbt-N{n}", lambda c, r=resized: run_experiment(r(c), task).best_score))
        out.append((f"random-N{n}", lambda c, r=resized: run_random_search_baseline(r(c), task).best_score))
    return out


def cmd_suite(cfg: RunConfig, suite: str) -> int:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {SUITES}")
    run_dir = _run_dir(cfg, suite)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_resolved(cfg, run_dir / "resolved_config.yaml")
    seeds = cfg.suite.get("seeds", list(range(20)))
    results: Dict[str, List[float]] = {}
    try:
        for name, fn in _suite_variants(cfg, suite):
            scores = []
            for seed in seeds:
                try:
                    scores.append(fn(cfg.experiment.replace(seed=seed)))
                except ExperimentFailed as exc:
                    log.warning("%s seed %s failed: %s", name, seed, exc)
                    scores.append(float("nan"))
            results[name] = scores
    except Exception as exc:
        (run_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    rows = summarize(results)
    write_summary(rows, run_dir / "summary.csv")
    for row in rows:
        print(f"{row['variant']:>18}  median={row['median']:.4f}  iqr=[{row['q25']:.4f}, {row['q75']:.4f}]  n={row['n']}")
    return 0


def summarize(results: Dict[str, List[float]]) -> List[dict]:
    rows = []
    for name, scores in results.items():
        arr = np.asarray(scores, dtype=float)
        ok = arr[np.isfinite(arr)]
        q = np.percentile(ok, [25, 50, 75]) if len(ok) else [np.nan] * 3
        rows.append({
            "variant": name,
            "n": int(len(ok)),
            "failed": int(len(arr) - len(ok)),
            "median": float(q[1]),
            "q25": float(q[0]),
            "q75": float(q[2]),
            "min": float(ok.min()) if len(ok) else float("nan"),
            "max": float(ok.max()) if len(ok) else float("nan"),
        })
    return rows


def write_summary(rows: List[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def cmd_analyze(run_dir: Path, top_k: int) -> int:
    info = analyze_run(run_dir, top_k=top_k)
    print(f"{info['nodes']} nodes, forest={info['forest']}, final root ancestors={info['roots']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popbt", description="Population based training runner")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=["serial", "async", "partial-sync"])
    run.add_argument("--out")

    suite = sub.add_parser("suite", help="run a multi-seed experiment suite")
    suite.add_argument("name", choices=SUITES)
    suite.add_argument("--config", required=True)
    suite.add_argument("--seed", type=int, help="ignored; suites use suite.seeds")
    suite.add_argument("--mode", choices=["serial", "async", "partial-sync"])
    suite.add_argument("--out")

    analyze = sub.add_parser("analyze", help="phylogeny, lineages and top-k curves for a run directory")
    analyze.add_argument("run_dir", nargs="?")
    analyze.add_argument("--out", help="run directory (alternative to the positional argument)")
    analyze.add_argument("--top-k", type=int, default=5)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "analyze":
        run_dir = args.run_dir or args.out
        if run_dir is None:
            parser.error("analyze needs a run directory")
        return cmd_analyze(Path(run_dir), args.top_k)
    try:
        cfg = parse_config(args.config)
    except FileNotFoundError:
        parser.error(f"config file not found: {args.config}")
    except ConfigError as exc:
        parser.error(f"invalid config {args.config}: {exc}")
    if args.command == "run":
        return cmd_run(_with_overrides(cfg, args.seed, args.mode, args.out))
    return cmd_suite(_with_overrides(cfg, None, args.mode, args.out), args.name)


if __name__ == "__main__":
    sys.exit(main())
