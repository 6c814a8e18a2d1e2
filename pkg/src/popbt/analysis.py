"""Post-hoc analysis of a run's event log: phylogenetic forests, ancestor
census, per-member hyperparameter lineages and top-k curve aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from .events import LineageEvent, read_events


class MalformedLog(ValueError):
    pass


@dataclass
class Node:
    id: int
    member_id: int
    t: int
    p: float
    h: dict
    parent: Optional[int] = None
    edge: Optional[str] = None  # "train" or "branch"


@dataclass
class Phylogeny:
    nodes: Dict[int, Node]
    roots: List[int]
    heads: Dict[int, int]  # member id -> newest node of that member
    failed: Set[int] = field(default_factory=set)

    @property
    def edges(self) -> List[tuple]:
        """(parent, child, kind, color) with color = min-max normalised p of the child."""
        finite = [n.p for n in self.nodes.values() if math.isfinite(n.p)]
        lo, hi = (min(finite), max(finite)) if finite else (0.0, 0.0)
        span = hi - lo
        out = []
        for n in self.nodes.values():
            if n.parent is None:
                continue
            if not math.isfinite(n.p):
                color = 0.0
            else:
                color = (n.p - lo) / span if span > 0 else 1.0
            out.append((n.parent, n.id, n.edge, color))
        return out

    def root_of(self, node_id: int) -> int:
        seen = set()
        while self.nodes[node_id].parent is not None:
            if node_id in seen:
                raise MalformedLog("cycle in phylogeny")
            seen.add(node_id)
            node_id = self.nodes[node_id].parent
        return node_id

    def path_to_root(self, node_id: int) -> List[Node]:
        path = [self.nodes[node_id]]
        while path[-1].parent is not None:
            path.append(self.nodes[path[-1].parent])
        return path

    def is_forest(self) -> bool:
        """Every non-root node has exactly one parent that was created before it."""
        for n in self.nodes.values():
            if n.parent is None:
                if n.id not in self.roots:
                    return False
            elif n.parent not in self.nodes or n.parent >= n.id:
                return False
        return True

    def final_members(self) -> List[int]:
        return sorted(m for m in self.heads if m not in self.failed)

    def final_roots(self) -> Set[int]:
        """Root member ids of the members alive at the end of the log."""
        return {self.nodes[self.root_of(self.heads[m])].member_id for m in self.final_members()}

    def to_dot(self) -> str:
        lines = ["digraph phylogeny {", "  rankdir=LR;", "  node [shape=point];"]
        for n in sorted(self.nodes.values(), key=lambda n: n.id):
            lines.append(f'  n{n.id} [member={n.member_id}, t={n.t}, p="{n.p!r}"];')
        for parent, child, kind, color in sorted(self.edges, key=lambda e: e[1]):
            style = "solid" if kind == "train" else "dashed"
            lines.append(f'  n{parent} -> n{child} [kind={kind}, style={style}, color_value="{color:.6f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_phylogeny(events: Iterable[LineageEvent]) -> Phylogeny:
    """Rebuild the forest of training segments and exploit branches.

    Each init, eval and exploit event creates a node. Evals extend their
    member's segment; exploits that copy weights hang the new node off the
    source checkpoint's node. Explore events only relabel the newest node's
    hyperparameters.
    """
    nodes: Dict[int, Node] = {}
    roots: List[int] = []
    heads: Dict[int, int] = {}
    by_checkpoint: Dict[int, int] = {}
    failed: Set[int] = set()
    last = -math.inf
    for ev in events:
        if ev.event_counter <= last:
            raise MalformedLog("events are not in increasing counter order")
        last = ev.event_counter
        m = ev.member_id
        if ev.kind == "init":
            node = Node(ev.event_counter, m, ev.t_at_event, ev.p_at_event, dict(ev.h_after or {}))
            roots.append(node.id)
        elif ev.kind == "eval":
            if m not in heads:
                raise MalformedLog(f"eval for member {m} before its init")
            prev = nodes[heads[m]]
            h = dict(ev.h_after) if ev.h_after is not None else dict(prev.h)
            node = Node(ev.event_counter, m, ev.t_at_event, ev.p_at_event, h, prev.id, "train")
        elif ev.kind == "exploit":
            if m not in heads:
                raise MalformedLog(f"exploit by unknown member {m}")
            if ev.checkpoint is not None and ev.checkpoint in by_checkpoint:
                src = by_checkpoint[ev.checkpoint]
            elif ev.parent_member_id in heads and ev.checkpoint is None:
                src = heads[ev.parent_member_id]
            else:
                raise MalformedLog(
                    f"exploit at event {ev.event_counter} references unknown parent "
                    f"{ev.parent_member_id} / checkpoint {ev.checkpoint}"
                )
            if ev.mask == "hyperparams-only":
                parent, kind = heads[m], "train"
            else:
                parent, kind = src, "branch"
            node = Node(ev.event_counter, m, ev.t_at_event, ev.p_at_event, dict(ev.h_after or {}), parent, kind)
        elif ev.kind == "explore":
            if m not in heads:
                raise MalformedLog(f"explore by unknown member {m}")
            nodes[heads[m]].h = dict(ev.h_after)
            continue
        else:  # fail
            failed.add(m)
            continue
        nodes[node.id] = node
        heads[m] = node.id
        if ev.checkpoint is not None and ev.kind != "exploit":
            by_checkpoint[ev.checkpoint] = node.id
    return Phylogeny(nodes, roots, heads, failed)


def ancestor_census(events: Iterable[LineageEvent], at_event_counter: Optional[float] = None) -> Set[int]:
    """Distinct root ancestors among live members after ``at_event_counter``."""
    ancestors: Dict[int, int] = {}
    for ev in events:
        if at_event_counter is not None and ev.event_counter > at_event_counter:
            break
        if ev.kind == "init":
            ancestors[ev.member_id] = ev.member_id if ev.ancestor_id is None else ev.ancestor_id
        elif ev.kind == "exploit" and ev.mask != "hyperparams-only":
            ancestors[ev.member_id] = ev.ancestor_id
        elif ev.kind == "fail":
            ancestors.pop(ev.member_id, None)
    return set(ancestors.values())


def census_trajectory(events: Sequence[LineageEvent]) -> List[Set[int]]:
    """Census after every event, in log order."""
    out = []
    ancestors: Dict[int, int] = {}
    for ev in events:
        if ev.kind == "init":
            ancestors[ev.member_id] = ev.member_id if ev.ancestor_id is None else ev.ancestor_id
        elif ev.kind == "exploit" and ev.mask != "hyperparams-only":
            ancestors[ev.member_id] = ev.ancestor_id
        elif ev.kind == "fail":
            ancestors.pop(ev.member_id, None)
        out.append(set(ancestors.values()))
    return out


def extract_lineages(events: Sequence[LineageEvent], final_population=None) -> Dict[int, List[tuple]]:
    """Hyperparameter schedule ``[(t, h), ...]`` experienced by each final
    member's weights, following exploit copies back to the root."""
    phylo = build_phylogeny(events)
    if final_population is None:
        members = phylo.final_members()
    else:
        members = [m if isinstance(m, int) else m.id for m in final_population]
    out = {}
    for m in members:
        path = phylo.path_to_root(phylo.heads[m])  # newest first
        kept: List[tuple] = []
        for node in path:
            if not kept or node.t < kept[-1][0]:
                kept.append((node.t, dict(node.h)))
        out[m] = kept[::-1]
    return out


@dataclass
class CurveTable:
    steps: np.ndarray
    top_k_mean: np.ndarray
    traces: np.ndarray  # members x steps, forward-filled, NaN before first eval
    member_ids: List[int]
    top_k: int


def aggregate_curves(report, top_k: int = 5) -> CurveTable:
    """Mean score of the ``top_k`` best members at every logged step.

    ``report`` is anything with a ``curves`` list of (step, member_id, p, h)
    rows, e.g. a :class:`~popbt.engine.RunReport`.
    """
    rows = report.curves
    member_ids = sorted({r[1] for r in rows})
    n = len(member_ids)
    if not 1 <= top_k <= n:
        raise ValueError(f"top_k must lie in [1, {n}], got {top_k}")
    steps = np.array(sorted({r[0] for r in rows}), dtype=int)
    col = {s: i for i, s in enumerate(steps)}
    row = {m: i for i, m in enumerate(member_ids)}
    traces = np.full((n, len(steps)), np.nan)
    for step, mid, p, _h in rows:
        traces[row[mid], col[step]] = p
    for i in range(n):  # carry the latest score forward between evals
        for j in range(1, len(steps)):
            if np.isnan(traces[i, j]):
                traces[i, j] = traces[i, j - 1]
    means = np.full(len(steps), np.nan)
    for j in range(len(steps)):
        vals = traces[:, j]
        vals = np.sort(vals[np.isfinite(vals)])[::-1]
        if len(vals):
            means[j] = vals[:top_k].mean()
    return CurveTable(steps, means, traces, member_ids, top_k)


# -- files -------------------------------------------------------------------


@dataclass
class _Curves:
    curves: list


def read_curves(path: Path) -> _Curves:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[3:]
        for rec in reader:
            h = dict(zip(names, rec[3:]))
            rows.append((int(rec[0]), int(rec[1]), float(rec[2]), h))
    return _Curves(rows)


def write_lineages(lineages: Dict[int, List[tuple]], path: Path) -> None:
    names = sorted({k for seq in lineages.values() for _, h in seq for k in h})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["member_id", "step", *names])
        for m in sorted(lineages):
            for t, h in lineages[m]:
                w.writerow([m, t, *(repr(h[n]) if isinstance(h.get(n), float) else h.get(n, "") for n in names)])


def write_curves_top_k(table: CurveTable, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", f"top{table.top_k}_mean", *(f"member_{m}" for m in table.member_ids)])
        for j, step in enumerate(table.steps):
            w.writerow([int(step), repr(float(table.top_k_mean[j])),
                        *(repr(float(v)) for v in table.traces[:, j])])


def analyze_run(run_dir, top_k: int = 5) -> dict:
    """Write phylogeny.dot, lineages.csv and curves_top_k.csv for a run directory."""
    run_dir = Path(run_dir)
    events = read_events(run_dir / "events.jsonl")
    phylo = build_phylogeny(events)
    (run_dir / "phylogeny.dot").write_text(phylo.to_dot())
    final = None
    final_path = run_dir / "final_population.json"
    if final_path.exists():
        doc = json.loads(final_path.read_text())
        failed = {int(k) for k in doc.get("failed", {})}
        final = [m["id"] for m in doc["members"] if m["id"] not in failed]
    lineages = extract_lineages(events, final)
    write_lineages(lineages, run_dir / "lineages.csv")
    curves = read_curves(run_dir / "curves.csv")
    k = min(top_k, len({r[1] for r in curves.curves}))
    write_curves_top_k(aggregate_curves(curves, k), run_dir / "curves_top_k.csv")
    return {
        "roots": sorted(phylo.final_roots()),
        "nodes": len(phylo.nodes),
        "forest": phylo.is_forest(),
        "members": sorted(lineages),
    }
