"""Shared population store: published member states, checkpoints and the
event log.

Writes are linearizable per member (last write wins behind a version
guard). Reads across members go through :meth:`PopulationStore.snapshot`
and may be stale with respect to in-flight writes; nothing ever waits on
another member's progress.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .core import NEG_INF, MemberState, as_param_vector
from .events import LineageEvent

log = logging.getLogger(__name__)

COPY_MASKS = ("all", "hyperparams-only", "weights-only")


class StaleWriteError(RuntimeError):
    """A publish carried a version not newer than the stored one."""


class CheckpointRef(NamedTuple):
    member_id: int
    created_at: int


@dataclass(frozen=True, eq=False)
class Checkpoint:
    member_id: int
    t: int
    theta: np.ndarray
    h: dict
    p: float
    ancestor_id: int
    created_at: int
    parent_member_id: Optional[int] = None

    @property
    def ref(self) -> CheckpointRef:
        return CheckpointRef(self.member_id, self.created_at)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.member_id == other.member_id
            and self.t == other.t
            and self.theta.dtype == other.theta.dtype
            and self.theta.tobytes() == other.theta.tobytes()
            and _typed_items(self.h) == _typed_items(other.h)
            and _float_bits(self.p) == _float_bits(other.p)
            and self.ancestor_id == other.ancestor_id
            and self.created_at == other.created_at
            and self.parent_member_id == other.parent_member_id
        )


def _float_bits(x: float) -> bytes:
    return np.float64(x).tobytes()


def _typed_items(h: dict):
    return sorted((k, type(v).__name__, v) for k, v in h.items())


# -- checkpoint text format --------------------------------------------------

_MAGIC = "# popbt checkpoint v1"


def _fmt_float(x: float) -> str:
    s = format(float(x), ".17g")
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def _fmt_hvalue(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        raise TypeError("boolean hyperparameters are not supported")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(v)
    return json.dumps(str(v))


def _parse_hvalue(s: str):
    if s.startswith('"'):
        return json.loads(s)
    try:
        return int(s)
    except ValueError:
        return float(s)


def serialize_checkpoint(c: Checkpoint) -> str:
    lines = [
        _MAGIC,
        f"member_id: {c.member_id}",
        f"t: {c.t}",
        f"p: {_fmt_float(c.p)}",
        f"ancestor_id: {c.ancestor_id}",
        f"parent_member_id: {'none' if c.parent_member_id is None else c.parent_member_id}",
        f"created_at: {c.created_at}",
    ]
    for name in sorted(c.h):
        lines.append(f"h.{name}: {_fmt_hvalue(c.h[name])}")
    lines.append(f"theta[{len(c.theta)}]: " + " ".join(_fmt_float(x) for x in c.theta))
    return "\n".join(lines) + "\n"


def deserialize_checkpoint(text: str) -> Checkpoint:
    lines = text.splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not a popbt checkpoint")
    fields: Dict[str, str] = {}
    h = {}
    theta = None
    for line in lines[1:]:
        key, _, value = line.partition(": ")
        if key.startswith("h."):
            h[key[2:]] = _parse_hvalue(value)
        elif key.startswith("theta["):
            n = int(key[len("theta["):-1])
            vals = [float(v) for v in value.split()] if value else []
            if len(vals) != n:
                raise ValueError(f"checkpoint declares {n} parameters but holds {len(vals)}")
            theta = as_param_vector(vals)
        else:
            fields[key] = value
    if theta is None:
        raise ValueError("checkpoint has no theta record")
    parent = fields["parent_member_id"]
    return Checkpoint(
        member_id=int(fields["member_id"]),
        t=int(fields["t"]),
        theta=theta,
        h=h,
        p=float(fields["p"]),
        ancestor_id=int(fields["ancestor_id"]),
        created_at=int(fields["created_at"]),
        parent_member_id=None if parent == "none" else int(parent),
    )


# -- store -------------------------------------------------------------------


@dataclass(frozen=True)
class StoreSnapshot:
    states: Dict[int, MemberState]
    checkpoints: Dict[int, CheckpointRef]
    failed: frozenset = frozenset()
    counter: int = 0

    def __len__(self) -> int:
        return len(self.states)


class PopulationStore:
    """In-process store. Thread-safe; every operation is atomic per record."""

    writes_events = False

    def __init__(self, initial_states: Sequence[MemberState]):
        if not initial_states:
            raise ValueError("store needs at least one member")
        ids = sorted(s.id for s in initial_states)
        if ids != list(range(len(ids))):
            raise ValueError("member ids must be dense integers 0..N-1")
        self._lock = threading.RLock()
        self._counter = 0
        self._states: Dict[int, MemberState] = {}
        self._latest: Dict[int, CheckpointRef] = {}
        self._retained: set = set()
        self._failed: Dict[int, str] = {}
        self._events: List[LineageEvent] = []
        self._ckpts: Dict[CheckpointRef, Checkpoint] = {}
        for s in sorted(initial_states, key=lambda s: s.id):
            self._states[s.id] = s.evolve(p=NEG_INF) if math.isnan(s.p) else s
            ref = self.save_checkpoint(s)
            self._emit(kind="init", member_id=s.id, t_at_event=s.t, p_at_event=s.p,
                       h_after=dict(s.h), ancestor_id=s.ancestor_id, checkpoint=ref.created_at)

    @property
    def size(self) -> int:
        return len(self._states)

    # counters and events

    def _tick(self) -> int:
        with self._lock:
            self._counter += 1
            return self._counter

    def _emit(self, **fields) -> LineageEvent:
        with self._lock:
            ev = LineageEvent(event_counter=self._tick(), **fields)
            self._events.append(ev)
            self._on_event(ev)
            return ev

    def _on_event(self, ev: LineageEvent) -> None:
        pass

    def log_event(self, kind: str, state: MemberState, **extra) -> LineageEvent:
        return self._emit(kind=kind, member_id=state.id, t_at_event=state.t, p_at_event=state.p,
                          ancestor_id=state.ancestor_id, **extra)

    @property
    def events(self) -> List[LineageEvent]:
        with self._lock:
            return list(self._events)

    # performance records

    def publish(self, state: MemberState, checkpoint: Optional[CheckpointRef] = None,
                parent_member_id: Optional[int] = None) -> int:
        """Store ``state`` as the member's latest and log an eval event.

        Returns the stored version. Raises :class:`StaleWriteError` if the
        version does not advance.
        """
        with self._lock:
            if state.id not in self._states:
                raise KeyError(f"unknown member {state.id}")
            current = self._states[state.id]
            if state.version <= current.version:
                raise StaleWriteError(
                    f"member {state.id}: version {state.version} is not newer than stored {current.version}"
                )
            self._states[state.id] = state
            self._emit(kind="eval", member_id=state.id, t_at_event=state.t, p_at_event=state.p,
                       h_after=dict(state.h), ancestor_id=state.ancestor_id,
                       parent_member_id=parent_member_id,
                       checkpoint=None if checkpoint is None else checkpoint.created_at)
            return state.version

    def commit(self, state: MemberState, parent_member_id: Optional[int] = None) -> CheckpointRef:
        """Checkpoint and publish ``state`` as one atomic store event."""
        with self._lock:
            if state.id in self._states and state.version <= self._states[state.id].version:
                raise StaleWriteError(
                    f"member {state.id}: version {state.version} is not newer than stored "
                    f"{self._states[state.id].version}"
                )
            ref = self.save_checkpoint(state, parent_member_id=parent_member_id)
            self.publish(state, ref, parent_member_id=parent_member_id)
            return ref

    def snapshot(self) -> StoreSnapshot:
        with self._lock:
            return StoreSnapshot(
                states=dict(self._states),
                checkpoints=dict(self._latest),
                failed=frozenset(self._failed),
                counter=self._counter,
            )

    def state(self, member_id: int) -> MemberState:
        with self._lock:
            return self._states[member_id]

    def mark_failed(self, member_id: int, reason: str) -> None:
        with self._lock:
            self._failed[member_id] = reason
            s = self._states[member_id]
            self._states[member_id] = s.evolve(p=NEG_INF, window=s.window.cleared(), version=s.version + 1)
            self._emit(kind="fail", member_id=member_id, t_at_event=s.t, p_at_event=NEG_INF,
                       ancestor_id=s.ancestor_id)
        log.warning("member %d failed: %s", member_id, reason)

    @property
    def failures(self) -> Dict[int, str]:
        with self._lock:
            return dict(self._failed)

    # checkpoints

    def save_checkpoint(self, state: MemberState, parent_member_id: Optional[int] = None) -> CheckpointRef:
        theta = as_param_vector(state.theta)
        with self._lock:
            ckpt = Checkpoint(
                member_id=state.id,
                t=state.t,
                theta=theta,
                h=dict(state.h),
                p=float(state.p),
                ancestor_id=state.ancestor_id,
                created_at=self._tick(),
                parent_member_id=parent_member_id,
            )
            self._write_checkpoint(ckpt)
            previous = self._latest.get(state.id)
            self._latest[state.id] = ckpt.ref
            if previous is not None and previous not in self._retained:
                self._delete_checkpoint(previous)
            return ckpt.ref

    def load_checkpoint(self, ref: CheckpointRef) -> Checkpoint:
        ref = CheckpointRef(*ref)
        with self._lock:
            return self._read_checkpoint(ref)

    def latest_checkpoint(self, member_id: int) -> CheckpointRef:
        with self._lock:
            return self._latest[member_id]

    def retain(self, ref: CheckpointRef) -> None:
        """Keep ``ref`` on disk past the owner's next save (exploit sources)."""
        with self._lock:
            self._retained.add(CheckpointRef(*ref))

    def _write_checkpoint(self, ckpt: Checkpoint) -> None:
        self._ckpts[ckpt.ref] = ckpt

    def _read_checkpoint(self, ref: CheckpointRef) -> Checkpoint:
        try:
            return self._ckpts[ref]
        except KeyError:
            raise KeyError(f"unknown checkpoint {ref}") from None

    def _delete_checkpoint(self, ref: CheckpointRef) -> None:
        self._ckpts.pop(ref, None)

    # exploit

    def exploit_copy(self, dst_id: int, src: Checkpoint, mask: str = "all") -> MemberState:
        """Overwrite member ``dst_id`` with (part of) checkpoint ``src``.

        The returned state is not published; the caller explores,
        re-evaluates and publishes it.
        """
        if mask not in COPY_MASKS:
            raise ValueError(f"unknown copy mask {mask!r}")
        with self._lock:
            if dst_id not in self._states:
                raise KeyError(f"unknown member {dst_id}")
            dst = self._states[dst_id]
            theta, ancestor, window = dst.theta, dst.ancestor_id, dst.window
            h = dict(dst.h)
            if mask in ("all", "weights-only"):
                theta, ancestor, window = src.theta, src.ancestor_id, dst.window.cleared()
            if mask in ("all", "hyperparams-only"):
                h = dict(src.h)
            new = dst.evolve(theta=theta, h=h, ancestor_id=ancestor, window=window,
                             steps_since_event=0, version=dst.version + 1)
            self.retain(src.ref)
            self._emit(kind="exploit", member_id=dst_id, t_at_event=dst.t, p_at_event=src.p,
                       h_before=dict(dst.h), h_after=dict(h), parent_member_id=src.member_id,
                       ancestor_id=ancestor, checkpoint=src.created_at, mask=mask)
            return new

    def exploit_latest(self, dst_id: int, src_id: int, mask: str = "all"):
        """Copy from ``src_id``'s current checkpoint in one atomic step.

        Returns ``(new state, source checkpoint)``, or None if the source
        has failed since it was selected. Copying the current checkpoint
        rather than the one seen in an older snapshot keeps the ancestor
        census from reviving lineages that have already died out.
        """
        with self._lock:
            if src_id in self._failed:
                return None
            src = self._read_checkpoint(self._latest[src_id])
            return self.exploit_copy(dst_id, src, mask), src


class DirectoryStore(PopulationStore):
    """File-backed store: checkpoints under ``<run_dir>/checkpoints`` and the
    event log appended to ``<run_dir>/events.jsonl`` as it happens."""

    writes_events = True

    def __init__(self, initial_states: Sequence[MemberState], run_dir):
        self.run_dir = Path(run_dir)
        (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        self._event_path = self.run_dir / "events.jsonl"
        self._event_fh = open(self._event_path, "w")
        super().__init__(initial_states)

    def close(self) -> None:
        with self._lock:
            if not self._event_fh.closed:
                self._event_fh.close()

    def _on_event(self, ev: LineageEvent) -> None:
        self._event_fh.write(ev.to_json() + "\n")
        self._event_fh.flush()

    def checkpoint_path(self, ref: CheckpointRef) -> Path:
        return self.run_dir / "checkpoints" / str(ref.member_id) / f"{ref.created_at}.ckpt"

    def _write_checkpoint(self, ckpt: Checkpoint) -> None:
        path = self.checkpoint_path(ckpt.ref)
        path.parent.mkdir(parents=True, exist_ok=True)
        # write-then-rename so readers never see a partial checkpoint
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(serialize_checkpoint(ckpt))
        os.replace(tmp, path)

    def _read_checkpoint(self, ref: CheckpointRef) -> Checkpoint:
        path = self.checkpoint_path(ref)
        try:
            return deserialize_checkpoint(path.read_text())
        except FileNotFoundError:
            raise KeyError(f"unknown checkpoint {ref}") from None

    def _delete_checkpoint(self, ref: CheckpointRef) -> None:
        try:
            self.checkpoint_path(ref).unlink()
        except FileNotFoundError:
            pass
