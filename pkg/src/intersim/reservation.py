"""Cell reservation: desired-cell computation, conflict grouping, transition
classification, and the arbiter that makes every step collision-free.

Each controlled leader claims the cells it may need next step: the larger of
its stopping distance and its one-step survey distance, converted to whole
cells. Leaders whose claims intersect form coordination groups (connected
components of the shared-cell relation). The arbiter then grants cells in a
fixed priority order and downgrades any action whose claim is denied, with
full braking as the always-feasible fallback: a braking vehicle only ever
needs its previously granted stop envelope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .geometry import CellIndex, RoutePath, cells_occupied
from .kinematics import Action, KinematicsParams, VehicleState, motion_delta, stop_distance


class TransitionType(Enum):
    SAME_KIND = "same_kind"
    COORDINATED_TO_INDEPENDENT = "coordinated_to_independent"
    INDEPENDENT_TO_COORDINATED = "independent_to_coordinated"


@dataclass(frozen=True)
class DesiredCellSet:
    """Cells a vehicle needs for its next step: current occupancy plus
    ds_cells route cells ahead of the nose (clipped at the route end)."""

    vehicle_id: int
    step: int
    cells: Tuple[CellIndex, ...]
    ds_cells: int


def desired_cell_count(speed: float, k: KinematicsParams, cell_size: float) -> int:
    """Whole-cell count covering max(stop distance, survey distance).

    Survey is the one-step travel envelope: v*dt + a*dt^2/2 below the speed
    limit, v*dt at it. Stop is v^2/(2*a_dec). Distances are computed in
    meters and converted with a ceiling.
    """
    if speed >= k.vmax - 1e-12:
        survey = speed * k.dt
    else:
        survey = speed * k.dt + 0.5 * k.a_acc * k.dt * k.dt
    ds_m = max(stop_distance(speed, k), survey)
    return int(math.ceil(ds_m / cell_size - 1e-12))


def desired_cells(v: VehicleState, k: KinematicsParams, step: int = 0) -> DesiredCellSet:
    """Desired-cell set for one controlled vehicle on its route."""
    path: RoutePath = v.route
    if path is None:
        raise ValueError(f"vehicle {v.id} has no route")
    if v.position < -1e-9 or v.position > path.total_length + 1e-9:
        raise ValueError(f"vehicle {v.id} off-route at {v.position}")
    ds = desired_cell_count(v.speed, k, path.cell_size)
    current = cells_occupied(v.position, v.length, path)
    _, nose_idx = path.index_span(max(v.position - v.length, 0.0), min(v.position, path.total_length))
    ahead = path.cells[nose_idx + 1 : nose_idx + 1 + ds]
    return DesiredCellSet(v.id, step, current + ahead, ds)


@dataclass(frozen=True)
class CoordinationGroup:
    """One connected component of the shared-desired-cell graph. Singletons
    are independent vehicles; larger groups are coordinated."""

    group_id: int
    members: Tuple[int, ...]
    shared_cells: Tuple[CellIndex, ...]

    @property
    def coordinated(self) -> bool:
        return len(self.members) > 1


def detect_conflicts(all_desired: Sequence[DesiredCellSet]) -> List[CoordinationGroup]:
    """Partition claimants into coordination groups.

    Vehicles are nodes, a shared desired cell is an edge; groups are the
    connected components (union-find). Output is deterministic: groups are
    ordered by their smallest member id.
    """
    ids = [d.vehicle_id for d in all_desired]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate vehicle ids in desired sets")

    parent: Dict[int, int] = {vid: vid for vid in ids}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            parent[rb] = ra

    claimants: Dict[CellIndex, List[int]] = {}
    for d in all_desired:
        for cell in d.cells:
            claimants.setdefault(cell, []).append(d.vehicle_id)
    shared_by_root: Dict[int, Set[CellIndex]] = {}
    for cell, vids in claimants.items():
        for other in vids[1:]:
            union(vids[0], other)
    members_by_root: Dict[int, List[int]] = {}
    for vid in ids:
        members_by_root.setdefault(find(vid), []).append(vid)
    for cell, vids in claimants.items():
        if len(vids) > 1:
            shared_by_root.setdefault(find(vids[0]), set()).add(cell)

    groups = []
    for gid, root in enumerate(sorted(members_by_root)):
        members = tuple(sorted(members_by_root[root]))
        shared = tuple(sorted(shared_by_root.get(root, ())))
        groups.append(CoordinationGroup(gid, members, shared))
    return groups


def classify_transition(
    prev_groups: Sequence[CoordinationGroup],
    new_groups: Sequence[CoordinationGroup],
    vehicle_id: int,
) -> TransitionType:
    """Classify a vehicle's step-to-step change of coordination status."""

    def status(groups: Sequence[CoordinationGroup]) -> bool:
        for g in groups:
            if vehicle_id in g.members:
                return g.coordinated
        raise ValueError(f"vehicle {vehicle_id} absent from groups")

    was, now = status(prev_groups), status(new_groups)
    if was == now:
        return TransitionType.SAME_KIND
    if was and not now:
        return TransitionType.COORDINATED_TO_INDEPENDENT
    return TransitionType.INDEPENDENT_TO_COORDINATED


@dataclass(frozen=True)
class ReservationTable:
    """Per-step cell claims and exclusive grants. Every granted cell has
    exactly one grantee and grants never exceed claims."""

    step: int
    claims: Dict[CellIndex, Tuple[int, ...]]
    grants: Dict[CellIndex, int]


class SafetyViolation(AssertionError):
    """Raised when the collision-freedom invariant breaks. Signals an
    arbiter bug, not a recoverable simulation state."""


@dataclass
class ClaimRequest:
    """Everything the arbiter needs to know about one vehicle this step.

    Envelopes are precomputed per candidate action: the cells swept during
    the step plus the full-braking trajectory cells from the post-action
    state. The prelock is the occupied + current-stop-envelope cell set,
    which by induction was granted to this vehicle last step.
    """

    vehicle_id: int
    priority: Tuple
    proposal: Action
    prelock: Tuple[CellIndex, ...]
    envelopes: Dict[Action, Tuple[CellIndex, ...]]
    # stop-line handling: None when unconstrained (no signal, or already
    # past the line, or physically unable to stop before it)
    line_blocked: Optional[Dict[Action, bool]] = None


def arbitrate(
    requests: Sequence[ClaimRequest], step: int = 0
) -> Tuple[Dict[int, Action], ReservationTable]:
    """Grant cells in priority order and downgrade conflicting proposals.

    Phase 1 locks every vehicle's occupied + stop-envelope cells; those sets
    are pairwise disjoint whenever last step's grants were honored, and the
    assertion here is the invariant check. Phase 2 walks vehicles by
    priority (earlier entry first, then current-cell order), trying the
    proposed action and stepwise downgrades; Decelerate needs nothing beyond
    the prelock, so it always fits.
    """
    grants: Dict[CellIndex, int] = {}
    claims: Dict[CellIndex, List[int]] = {}
    ordered = sorted(requests, key=lambda r: r.priority)

    for req in ordered:
        for cell in req.prelock:
            holder = grants.get(cell)
            if holder is not None and holder != req.vehicle_id:
                raise SafetyViolation(
                    f"stop envelopes of vehicles {holder} and {req.vehicle_id} "
                    f"overlap at {cell}"
                )
            grants[cell] = req.vehicle_id
        for cell in req.prelock:
            claims.setdefault(cell, []).append(req.vehicle_id)
        for cell in req.envelopes[req.proposal]:
            if cell not in req.prelock:
                claims.setdefault(cell, []).append(req.vehicle_id)

    actions: Dict[int, Action] = {}
    for req in ordered:
        chosen: Optional[Action] = None
        for value in range(req.proposal.value, Action.DECELERATE.value - 1, -1):
            action = Action(value)
            if req.line_blocked is not None and req.line_blocked.get(action, False):
                continue
            cells = req.envelopes[action]
            if all(grants.get(c, req.vehicle_id) == req.vehicle_id for c in cells):
                chosen = action
                break
        if chosen is None:
            # stop-line constraint rejected everything down to Decelerate;
            # braking within the prelock is always available
            chosen = Action.DECELERATE
        granted = req.envelopes[chosen]
        for cell in granted:
            holder = grants.get(cell)
            if holder is not None and holder != req.vehicle_id:
                raise SafetyViolation(
                    f"granted cell {cell} already held by {holder}"
                )
            grants[cell] = req.vehicle_id
        actions[req.vehicle_id] = chosen

    table = ReservationTable(
        step=step,
        claims={c: tuple(dict.fromkeys(v)) for c, v in claims.items()},
        grants=grants,
    )
    return actions, table
