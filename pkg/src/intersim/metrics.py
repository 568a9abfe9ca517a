"""Evaluation measures computed from episode logs.

Delay is the per-step sum of (dt - L/vmax) shares already carried on each
log row, so it equals travel time minus free-flow time exactly. Conflict
safety is summarized with post-encroachment time: for every conflict-box
cell, the gap between one vehicle vacating it and a vehicle from a different
approach arriving. Cross-controller comparisons use Welch's unequal-variance
t-test over per-seed means.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .episodelog import EnterEvent, EpisodeLog, ExitEvent
from .geometry import CorridorNetwork


@dataclass(frozen=True)
class VehicleRecord:
    id: int
    entry_time: float
    exit_time: Optional[float]
    total_delay: float
    journey_length: float

    @property
    def travel_time(self) -> Optional[float]:
        if self.exit_time is None:
            return None
        return self.exit_time - self.entry_time


@dataclass(frozen=True)
class PetEvent:
    cell: Tuple[int, int, int]
    exit_time: float
    arrival_time: float
    pet: float
    first_vehicle: int
    second_vehicle: int
    movements: Tuple[str, str]  # "approach:turn" of encroaching / arriving


def vehicle_records(log: EpisodeLog) -> Dict[int, VehicleRecord]:
    delays: Dict[int, float] = {}
    for row in log.rows:
        delays[row.vehicle] = delays.get(row.vehicle, 0.0) + row.reward_share
    entries: Dict[int, EnterEvent] = {e.vehicle: e for e in log.enter_events()}
    exits: Dict[int, float] = {e.vehicle: e.time for e in log.exit_events()}
    out = {}
    for vid, ev in entries.items():
        out[vid] = VehicleRecord(
            id=vid,
            entry_time=ev.time,
            exit_time=exits.get(vid),
            total_delay=delays.get(vid, 0.0),
            journey_length=ev.journey_length,
        )
    return out


def vehicle_delay(log: EpisodeLog, vehicle_id: int) -> float:
    """Accumulated (dt - L/vmax) over the vehicle's logged steps."""
    records = vehicle_records(log)
    if vehicle_id not in records:
        raise KeyError(f"unknown vehicle {vehicle_id}")
    return records[vehicle_id].total_delay


def _itinerary_map(log: EpisodeLog) -> Dict[int, Dict[int, Tuple[str, str]]]:
    """vehicle -> intersection -> (approach, turn) from enter events."""
    out: Dict[int, Dict[int, Tuple[str, str]]] = {}
    for ev in log.enter_events():
        hops: Dict[int, Tuple[str, str]] = {}
        for part in ev.itinerary.split(";"):
            k, approach, _lane, turn = part.split(":")
            hops[int(k)] = (approach, turn)
        out[ev.vehicle] = hops
    return out


def compute_pet(
    log: EpisodeLog, network: CorridorNetwork, pet_max: float = 5.0
) -> List[PetEvent]:
    """Post-encroachment events over conflict-box cells.

    A cell vacated at time T (one step after its occupant last covered it)
    and next claimed at time T' by a vehicle approaching from a different
    side yields an event with pet = T' - T when within pet_max. Same-lane
    followers share the approach and are filtered out.
    """
    dt = float(log.meta.get("dt", 1.0))
    movements = _itinerary_map(log)
    in_box = {}
    for grid in network.grids:
        lo, hi = grid.box_range()
        in_box[grid.id] = (lo, hi)

    def is_box(cell: Tuple[int, int, int]) -> bool:
        rng = in_box.get(cell[0])
        return rng is not None and rng[0] <= cell[1] < rng[1] and rng[0] <= cell[2] < rng[1]

    events: List[PetEvent] = []
    prev_occ: Dict[Tuple[int, int, int], int] = {}
    vacated: Dict[Tuple[int, int, int], Tuple[float, int]] = {}
    step = None
    now_occ: Dict[Tuple[int, int, int], int] = {}

    def flush(prev_step: int) -> None:
        nonlocal prev_occ, vacated
        t_now = (prev_step + 1) * dt
        for cell, vid in prev_occ.items():
            if cell not in now_occ:
                vacated[cell] = (t_now, vid)
        for cell, vid in now_occ.items():
            if cell in prev_occ:
                continue
            left = vacated.get(cell)
            if left is None:
                continue
            t_free, vid_prev = left
            if vid_prev == vid:
                continue
            arrival = t_now
            pet = arrival - t_free
            mov_prev = movements.get(vid_prev, {}).get(cell[0])
            mov_now = movements.get(vid, {}).get(cell[0])
            if mov_prev is None or mov_now is None or mov_prev[0] == mov_now[0]:
                continue  # same approach: a follower, not a crossing conflict
            if 0.0 <= pet <= pet_max:
                events.append(PetEvent(
                    cell=cell, exit_time=t_free, arrival_time=arrival, pet=pet,
                    first_vehicle=vid_prev, second_vehicle=vid,
                    movements=(f"{mov_prev[0]}:{mov_prev[1]}", f"{mov_now[0]}:{mov_now[1]}"),
                ))

    for row in log.rows:
        if step is None:
            step = row.step
        if row.step != step:
            flush(step)
            prev_occ = now_occ
            now_occ = {}
            step = row.step
        for cell in row.cells:
            if is_box(cell):
                now_occ[cell] = row.vehicle
    if step is not None:
        flush(step)
    events.sort(key=lambda e: (e.arrival_time, e.cell))
    return events


METRIC_NAMES = ("mean_delay", "mean_travel_time", "throughput",
                "pet_min", "pet_mean", "pet_p15")


def seed_metrics(log: EpisodeLog, network: CorridorNetwork,
                 pet_max: float = 5.0) -> Dict[str, float]:
    """Per-seed scalar measures from one episode."""
    records = vehicle_records(log)
    delays = [r.total_delay for r in records.values()]
    travel = [r.travel_time for r in records.values() if r.exit_time is not None]
    pets = [e.pet for e in compute_pet(log, network, pet_max)]
    entered = len(records)
    exited = sum(1 for r in records.values() if r.exit_time is not None)
    return {
        "seed": float(log.meta.get("seed", -1)),
        "entered": float(entered),
        "throughput": float(exited),
        "mean_delay": float(np.mean(delays)) if delays else 0.0,
        "mean_travel_time": float(np.mean(travel)) if travel else 0.0,
        "total_delay": float(np.sum(delays)) if delays else 0.0,
        "pet_count": float(len(pets)),
        "pet_min": float(np.min(pets)) if pets else float("nan"),
        "pet_mean": float(np.mean(pets)) if pets else float("nan"),
        "pet_p15": float(np.percentile(pets, 15)) if pets else float("nan"),
    }


@dataclass(frozen=True)
class MetricSummary:
    metric: str
    mean: float
    sd: float
    n: int
    single_seed: bool


def summarize(per_seed: Sequence[Dict[str, float]]) -> List[MetricSummary]:
    """Across-seed mean and sample standard deviation per metric."""
    if not per_seed:
        raise ValueError("no per-seed metrics to summarize")
    out = []
    for name in METRIC_NAMES:
        values = [m[name] for m in per_seed if not math.isnan(m.get(name, float("nan")))]
        if not values:
            out.append(MetricSummary(name, float("nan"), 0.0, 0, True))
            continue
        mean = float(np.mean(values))
        sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        out.append(MetricSummary(name, mean, sd, len(values), len(values) == 1))
    return out


def welch_ttest(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    """(t statistic, two-sided p) for unequal-variance samples, with an
    exact-equality fast path when both variances vanish."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or len(ys) < 2:
        raise ValueError("need at least two seeds per side")
    vx, vy = xs.var(ddof=1), ys.var(ddof=1)
    if vx == 0.0 and vy == 0.0:
        return (0.0, 1.0) if xs.mean() == ys.mean() else (float("inf"), 0.0)
    se2 = vx / len(xs) + vy / len(ys)
    t = (xs.mean() - ys.mean()) / math.sqrt(se2)
    df = se2**2 / (
        (vx / len(xs)) ** 2 / (len(xs) - 1) + (vy / len(ys)) ** 2 / (len(ys) - 1)
    )
    p = 2.0 * float(stats.t.sf(abs(t), df))
    return float(t), p


@dataclass(frozen=True)
class MetricComparison:
    metric: str
    mean_a: float
    mean_b: float
    relative_change: float
    t_stat: float
    p_value: float


@dataclass(frozen=True)
class ComparisonReport:
    label_a: str
    label_b: str
    rows: Tuple[MetricComparison, ...]


def compare(
    a: Sequence[Dict[str, float]],
    b: Sequence[Dict[str, float]],
    label_a: str = "a",
    label_b: str = "b",
) -> ComparisonReport:
    """Per-metric Welch comparison of two per-seed metric sets."""
    rows = []
    for name in METRIC_NAMES:
        xs = [m[name] for m in a if not math.isnan(m.get(name, float("nan")))]
        ys = [m[name] for m in b if not math.isnan(m.get(name, float("nan")))]
        if len(xs) < 2 or len(ys) < 2:
            continue
        t, p = welch_ttest(xs, ys)
        mean_a, mean_b = float(np.mean(xs)), float(np.mean(ys))
        rel = (mean_b - mean_a) / mean_a if mean_a != 0 else float("nan")
        rows.append(MetricComparison(name, mean_a, mean_b, rel, t, p))
    return ComparisonReport(label_a, label_b, tuple(rows))


def throughput_conserved(log: EpisodeLog) -> bool:
    """entered == exited + still inside at the end of the episode."""
    entered = len(log.enter_events())
    exited = len(log.exit_events())
    last_step = max((r.step for r in log.rows), default=-1)
    exited_vids = {e.vehicle for e in log.exit_events()}
    active_last = {
        r.vehicle for r in log.rows if r.step == last_step and r.vehicle not in exited_vids
    }
    return entered == exited + len(active_last)
