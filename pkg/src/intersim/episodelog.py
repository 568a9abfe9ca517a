"""Episode logs: line-delimited per-vehicle step records plus entry/exit
events, schema-versioned and byte-reproducible.

File layout (text, one record per line):
  line 1          JSON meta header, schema "intersim-episode-log/1"
  V,...           one step record per vehicle per step (see COLUMNS)
  E,...           entry / exit events
  T,...           closing totals

Floats are written with repr (shortest round-trip), so identical runs give
identical bytes. Off-grid records carry -1 for intersection/row/col; the
cells field packs every occupied grid cell as int:row:col groups joined
with ';'.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

SCHEMA = "intersim-episode-log/1"

COLUMNS = (
    "step", "vehicle", "intersection", "row", "col",
    "position", "speed", "action", "group", "reward_share", "cells",
)


@dataclass(frozen=True)
class StepRow:
    step: int
    vehicle: int
    intersection: int
    row: int
    col: int
    position: float
    speed: float
    action: int          # executed action value, -1 when not yet inserted
    group: int           # coordination group id for leaders, else -1
    reward_share: float  # this vehicle's delay term for the step
    cells: Tuple[Tuple[int, int, int], ...]


@dataclass(frozen=True)
class EnterEvent:
    step: int
    time: float
    vehicle: int
    intersection: int
    approach: str
    itinerary: str       # "k:approach:lane:turn;..." hop encoding
    journey_length: float
    scheduled_time: float


@dataclass(frozen=True)
class ExitEvent:
    step: int
    time: float
    vehicle: int


@dataclass
class EpisodeLog:
    meta: Dict
    rows: List[StepRow] = field(default_factory=list)
    events: List[object] = field(default_factory=list)
    totals: Dict = field(default_factory=dict)

    def write(self, path: str) -> None:
        sink = FileSink(path)
        sink.write_meta(self.meta)
        pending = sorted(
            [("V", r.step, r) for r in self.rows] + [("E", e.step, e) for e in self.events],
            key=lambda item: (item[1], 0 if item[0] == "E" else 1),
        )
        for kind, _, rec in pending:
            if kind == "V":
                sink.step_row(rec)
            else:
                sink.event(rec)
        sink.close(self.totals)

    @classmethod
    def read(cls, path: str) -> "EpisodeLog":
        log: Optional[EpisodeLog] = None
        for kind, rec in iter_log(path):
            if kind == "meta":
                log = cls(meta=rec)
            elif kind == "V":
                log.rows.append(rec)
            elif kind == "E":
                log.events.append(rec)
            elif kind == "T":
                log.totals = rec
        if log is None:
            raise ValueError(f"{path}: empty or not an episode log")
        return log

    def enter_events(self) -> List[EnterEvent]:
        return [e for e in self.events if isinstance(e, EnterEvent)]

    def exit_events(self) -> List[ExitEvent]:
        return [e for e in self.events if isinstance(e, ExitEvent)]


def _pack_cells(cells: Sequence[Tuple[int, int, int]]) -> str:
    return ";".join(f"{k}:{r}:{c}" for k, r, c in cells)


def _unpack_cells(text: str) -> Tuple[Tuple[int, int, int], ...]:
    if not text:
        return ()
    out = []
    for part in text.split(";"):
        k, r, c = part.split(":")
        out.append((int(k), int(r), int(c)))
    return tuple(out)


class FileSink:
    """Streams records to disk as the episode runs."""

    def __init__(self, path: str) -> None:
        self._f = open(path, "w")
        self._meta_written = False

    def write_meta(self, meta: Dict) -> None:
        doc = dict(meta)
        doc["format"] = SCHEMA
        self._f.write(json.dumps(doc, sort_keys=True) + "\n")
        self._meta_written = True

    def step_row(self, r: StepRow) -> None:
        self._f.write(
            f"V,{r.step},{r.vehicle},{r.intersection},{r.row},{r.col},"
            f"{r.position!r},{r.speed!r},{r.action},{r.group},{r.reward_share!r},"
            f"{_pack_cells(r.cells)}\n"
        )

    def event(self, e: object) -> None:
        if isinstance(e, EnterEvent):
            self._f.write(
                f"E,{e.step},enter,{e.vehicle},{e.time!r},{e.intersection},"
                f"{e.approach},{e.itinerary},{e.journey_length!r},{e.scheduled_time!r}\n"
            )
        elif isinstance(e, ExitEvent):
            self._f.write(f"E,{e.step},exit,{e.vehicle},{e.time!r}\n")
        else:
            raise TypeError(f"unknown event {e!r}")

    def close(self, totals: Dict) -> None:
        self._f.write("T," + json.dumps(totals, sort_keys=True) + "\n")
        self._f.close()


class ListSink:
    """Accumulates an in-memory EpisodeLog."""

    def __init__(self) -> None:
        self.log = EpisodeLog(meta={})

    def write_meta(self, meta: Dict) -> None:
        doc = dict(meta)
        doc["format"] = SCHEMA
        self.log.meta = doc

    def step_row(self, r: StepRow) -> None:
        self.log.rows.append(r)

    def event(self, e: object) -> None:
        self.log.events.append(e)

    def close(self, totals: Dict) -> None:
        self.log.totals = dict(totals)


class NullSink:
    """Drops everything; used for safety-only bulk runs."""

    def write_meta(self, meta: Dict) -> None:
        pass

    def step_row(self, r: StepRow) -> None:
        pass

    def event(self, e: object) -> None:
        pass

    def close(self, totals: Dict) -> None:
        pass


def _parse_line(line: str):
    if line.startswith("V,"):
        parts = line.rstrip("\n").split(",")
        return "V", StepRow(
            step=int(parts[1]), vehicle=int(parts[2]), intersection=int(parts[3]),
            row=int(parts[4]), col=int(parts[5]), position=float(parts[6]),
            speed=float(parts[7]), action=int(parts[8]), group=int(parts[9]),
            reward_share=float(parts[10]), cells=_unpack_cells(parts[11]),
        )
    if line.startswith("E,"):
        parts = line.rstrip("\n").split(",")
        if parts[2] == "enter":
            return "E", EnterEvent(
                step=int(parts[1]), vehicle=int(parts[3]), time=float(parts[4]),
                intersection=int(parts[5]), approach=parts[6], itinerary=parts[7],
                journey_length=float(parts[8]), scheduled_time=float(parts[9]),
            )
        if parts[2] == "exit":
            return "E", ExitEvent(step=int(parts[1]), vehicle=int(parts[3]), time=float(parts[4]))
        raise ValueError(f"unknown event kind {parts[2]!r}")
    if line.startswith("T,"):
        return "T", json.loads(line[2:])
    raise ValueError(f"malformed log line: {line[:60]!r}")


def iter_log(path: str) -> Iterator[Tuple[str, object]]:
    """Stream a log file without holding it in memory."""
    with open(path) as f:
        first = f.readline()
        try:
            meta = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: missing meta header") from exc
        if not isinstance(meta, dict) or meta.get("format") != SCHEMA:
            raise ValueError(f"{path}: not an episode log (format field missing)")
        yield "meta", meta
        for line in f:
            if line.strip():
                yield _parse_line(line)
