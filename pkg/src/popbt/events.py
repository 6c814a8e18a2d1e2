"""Lineage events and their JSON-lines encoding."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional

EVENT_KINDS = ("init", "eval", "exploit", "explore", "fail")


@dataclass(frozen=True)
class LineageEvent:
    """One entry of the population's history.

    ``checkpoint`` is the ``created_at`` of the checkpoint this event produced
    (init/eval) or copied from (exploit). ``ancestor_id`` is the member's
    root ancestor after the event.
    """

    event_counter: int
    member_id: int
    kind: str
    t_at_event: int
    p_at_event: float
    h_before: Optional[dict] = None
    h_after: Optional[dict] = None
    parent_member_id: Optional[int] = None
    ancestor_id: Optional[int] = None
    checkpoint: Optional[int] = None
    mask: Optional[str] = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "exploit" and self.parent_member_id is None:
            raise ValueError("exploit events must name a parent")

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        p = d["p_at_event"]
        if p != p or p in (float("inf"), float("-inf")):
            d["p_at_event"] = repr(p)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "LineageEvent":
        d = json.loads(line)
        if isinstance(d["p_at_event"], str):
            d["p_at_event"] = float(d["p_at_event"])
        return cls(**d)


def write_events(path: Path, events: Iterable[LineageEvent]) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_events(path: Path) -> List[LineageEvent]:
    with open(path) as fh:
        events = [LineageEvent.from_json(line) for line in fh if line.strip()]
    return sorted(events, key=lambda e: e.event_counter)
