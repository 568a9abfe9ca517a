"""The per-step world update loop.

One World is one isolated episode: seeded arrivals enter boundary legs,
every vehicle follows a precomputed journey (legs, intersection grids,
arterial links) as a 1-D position, lane leaders inside each grid are the
controlled agents, and a single arbitration pass per step grants cells and
downgrades unsafe actions. After moving, the loop re-derives cell occupancy
from positions and asserts that no cell holds two vehicles; a failure there
means an arbiter bug, not a recoverable state.

Delay accounting: every vehicle contributes (dt - L/vmax) per step, with a
partial-step term on exit so a free-flow traversal accrues exactly zero.
Those per-vehicle shares are the reward signal, partitioned by approach-lane
stream, and they sum to the episode's total delay by construction.
"""
from __future__ import annotations

import json
from bisect import bisect_right, insort
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .arrivals import ArrivalSchedule, ArrivalSpec
from .episodelog import EnterEvent, EpisodeLog, ExitEvent, ListSink, StepRow
from .geometry import (
    HEADINGS,
    Approach,
    CellIndex,
    CorridorNetwork,
    Movement,
    RoutePath,
    Turn,
    turn_heading,
)
from .kinematics import (
    Action,
    KinematicsParams,
    VehicleState,
    max_entry_speed,
    motion_delta,
    safe_action_for_gap,
    stop_distance,
    time_to_cover,
)
from .reservation import (
    ClaimRequest,
    CoordinationGroup,
    SafetyViolation,
    arbitrate,
    desired_cells,
    detect_conflicts,
)

_FAR = (1 << 30, 1 << 30, 1 << 30)


@dataclass(frozen=True)
class Segment:
    kind: str                     # "leg" | "grid" | "link"
    start: float
    end: float
    lane_key: Optional[tuple]     # shared car-following identity off-grid
    hop_index: Optional[int] = None

    @property
    def length(self) -> float:
        return self.end - self.start


def receiving_lane(movement: Movement, lanes: int) -> int:
    if movement.turn is Turn.LEFT:
        return 0
    if movement.turn is Turn.RIGHT:
        return lanes - 1
    return movement.lane


def exit_heading(movement: Movement) -> Tuple[int, int]:
    return turn_heading(HEADINGS[movement.approach], movement.turn)


class Vehicle:
    __slots__ = (
        "vid", "spec", "length", "scheduled_time", "entry_time", "hops", "routes",
        "segments", "hop_seg", "journey_length", "inserted", "s", "speed",
        "seg_idx", "hop_idx", "cumulative_delay", "stream_now", "committed_hop",
    )

    def __init__(self, vid: int, spec: ArrivalSpec, network: CorridorNetwork) -> None:
        self.vid = vid
        self.spec = spec
        self.length = spec.length
        self.scheduled_time = spec.entry_time
        self.entry_time = spec.entry_time  # overwritten with activation time
        self.hops = spec.hops
        lanes = network.grids[0].lanes_per_approach

        routes: List[RoutePath] = []
        segments: List[Segment] = []
        hop_seg: List[int] = []
        s = 0.0
        k0, app0 = spec.entry
        first = spec.hops[0][1]
        segments.append(Segment("leg", s, s + network.leg_length,
                                ("leg", k0, app0.value, first.lane)))
        s += network.leg_length
        for i, (k, movement) in enumerate(spec.hops):
            route = network.grid_by_id(k).routes[movement]
            routes.append(route)
            hop_seg.append(len(segments))
            segments.append(Segment("grid", s, s + route.total_length, None, i))
            s += route.total_length
            if i + 1 < len(spec.hops):
                k_next, next_movement = spec.hops[i + 1]
                length = network.link_length_between(k, k_next)
                segments.append(Segment(
                    "link", s, s + length,
                    ("link", k, k_next, next_movement.approach.value, next_movement.lane),
                ))
                s += length
        last_k, last_movement = spec.hops[-1]
        out = exit_heading(last_movement)
        out_lane = receiving_lane(last_movement, lanes)
        segments.append(Segment("leg", s, s + network.leg_length,
                                ("xleg", last_k, out, out_lane)))
        s += network.leg_length

        self.routes = tuple(routes)
        self.segments = tuple(segments)
        self.hop_seg = tuple(hop_seg)
        self.journey_length = s
        self.inserted = False
        self.s = 0.0
        self.speed = 0.0
        self.seg_idx = 0
        self.hop_idx = 0
        self.cumulative_delay = 0.0
        self.stream_now: Optional[tuple] = None
        self.committed_hop = -1  # hop whose conflict box this vehicle holds

    # -- position helpers -------------------------------------------------

    def segment(self) -> Segment:
        return self.segments[self.seg_idx]

    def stream(self) -> Optional[tuple]:
        """(intersection, approach, lane) of the hop this vehicle is
        currently approaching or crossing; None once past its last box."""
        if self.hop_idx >= len(self.hops):
            return None
        k, movement = self.hops[self.hop_idx]
        return (k, movement.approach.value, movement.lane)

    def on_grid_arc(self) -> Optional[Tuple[int, Movement, RoutePath, float]]:
        seg = self.segments[self.seg_idx]
        if seg.kind != "grid":
            return None
        hop = seg.hop_index
        k, movement = self.hops[hop]
        return k, movement, self.routes[hop], self.s - seg.start

    def grid_cells(self, lo: float, hi: float) -> Tuple[CellIndex, ...]:
        """All grid cells intersected by the journey interval [lo, hi]."""
        if hi < lo:
            return ()
        out: Tuple[CellIndex, ...] = ()
        first = max(self.seg_idx - 2, 0)
        for seg in self.segments[first: self.seg_idx + 3]:
            if seg.kind != "grid" or seg.start > hi or seg.end < lo:
                continue
            route = self.routes[seg.hop_index]
            a = max(lo - seg.start, 0.0)
            b = min(hi - seg.start, route.total_length)
            if b >= a:
                out += route.cells_between(a, b)
        return out

    def nose_cell(self) -> Tuple[int, int, int]:
        on = self.on_grid_arc()
        if on is None:
            return (-1, -1, -1)
        k, _, route, arc = on
        idx = min(int(arc / route.cell_size), len(route.cells) - 1)
        cell = route.cells[idx]
        return (cell.intersection_id, cell.row, cell.col)


@dataclass
class ControlDecision:
    """What a controller wants this step: per-leader action proposals and,
    for signal-style controllers, the go-movement sets per intersection."""

    proposals: Dict[int, Action] = field(default_factory=dict)
    go: Optional[Dict[int, frozenset]] = None  # intersection -> movement keys


@dataclass
class StepResult:
    step: int
    time: float
    leaders: Dict[tuple, int]
    leader_states: Dict[int, Tuple[float, float, float, int]]
    leader_groups: Dict[int, Tuple[int, bool, Tuple[int, ...]]]
    actions: Dict[int, Action]
    stream_rewards: Dict[Optional[tuple], float]
    exited: Tuple[int, ...]
    vehicle_steps: int


class World:
    def __init__(
        self,
        network: CorridorNetwork,
        schedule: ArrivalSchedule,
        controller,
        kinematics: KinematicsParams,
        sink=None,
        margin: float = 1.0,
        queue_threshold: float = 2.0,
        safety_checks: bool = True,
        meta: Optional[Dict] = None,
    ) -> None:
        self.network = network
        self.schedule = schedule
        self.controller = controller
        self.k = kinematics
        self.margin = margin
        self.queue_threshold = queue_threshold
        self.safety_checks = safety_checks
        self.sink = sink
        self.step_idx = 0
        self.vehicles: List[Vehicle] = []
        self.pending: Dict[tuple, deque] = {}
        self._arrival_idx = 0
        self.total_reward = 0.0
        self.entered = 0
        self.exited_count = 0
        self.vehicle_steps = 0
        if self.sink is not None:
            self.sink.write_meta(meta or {})
        if hasattr(controller, "start_episode"):
            controller.start_episode(self)
        # per-step snapshots of the last decision, for controllers that need
        # queue readings and for tests
        self.last_queues: Dict[tuple, int] = {}
        self.last_leaders: Dict[tuple, int] = {}
        self.last_leader_states: Dict[int, Tuple[float, float, float, int]] = {}

    # -- indexes -----------------------------------------------------------

    def _build_indexes(self) -> None:
        seg_occ: Dict[tuple, List[Tuple[float, int, Vehicle]]] = {}
        route_occ: Dict[tuple, List[Tuple[float, int, Vehicle]]] = {}
        ext_occ: Dict[tuple, List[Tuple[float, int, Vehicle]]] = {}
        recv_occ: Dict[tuple, float] = {}
        for v in self.vehicles:
            seg = v.segments[v.seg_idx]
            if seg.kind == "grid":
                k, movement = v.hops[seg.hop_index]
                route = v.routes[seg.hop_index]
                arc = v.s - seg.start
                route_occ.setdefault((k, movement.key()), []).append((arc, v.vid, v))
                ext_occ.setdefault((k, movement.approach.value, movement.lane), []).append(
                    (arc, v.vid, v)
                )
                if arc > route.box_exit_arc:
                    key = ("recv", k, exit_heading(movement),
                           receiving_lane(movement, self.network.grids[0].lanes_per_approach))
                    clear = max(arc - v.length - route.box_exit_arc, 0.0)
                    if key not in recv_occ or clear < recv_occ[key]:
                        recv_occ[key] = clear
            else:
                seg_occ.setdefault(seg.lane_key, []).append((v.s - seg.start, v.vid, v))
        for lst in seg_occ.values():
            lst.sort()
        for lst in route_occ.values():
            lst.sort()
        for lst in ext_occ.values():
            lst.sort()
        self._seg_occ = seg_occ
        self._route_occ = route_occ
        self._ext_occ = ext_occ
        self._recv_occ = recv_occ

    def _gap_ahead(self, v: Vehicle) -> Optional[Tuple[float, float]]:
        """(gap, leader_speed) to the nearest obstruction ahead on this
        vehicle's lane, looking one segment past the current one."""
        seg = v.segments[v.seg_idx]
        best: Optional[Tuple[float, float]] = None

        def consider(gap: float, speed: float) -> None:
            nonlocal best
            if best is None or gap < best[0]:
                best = (gap, speed)

        if seg.kind != "grid":
            lst = self._seg_occ.get(seg.lane_key, ())
            pos = v.s - seg.start
            i = bisect_right(lst, (pos, v.vid, v))
            if i < len(lst):
                w = lst[i][2]
                consider(lst[i][0] - w.length - pos, w.speed)
            else:
                nxt = v.segments[v.seg_idx + 1] if v.seg_idx + 1 < len(v.segments) else None
                if nxt is not None and nxt.kind == "grid":
                    hop = nxt.hop_index
                    k, movement = v.hops[hop]
                    route = v.routes[hop]
                    to_end = seg.end - v.s
                    for arc_w, _, w in self._ext_occ.get(
                        (k, movement.approach.value, movement.lane), ()
                    )[:1]:
                        if arc_w - w.length <= route.box_entry_arc + 1e-9:
                            consider(to_end + arc_w - w.length, w.speed)
                    for arc_w, _, w in self._route_occ.get((k, movement.key()), ())[:1]:
                        consider(to_end + arc_w - w.length, w.speed)
        else:
            hop = seg.hop_index
            k, movement = v.hops[hop]
            route = v.routes[hop]
            arc = v.s - seg.start
            lst = self._route_occ.get((k, movement.key()), ())
            i = bisect_right(lst, (arc, v.vid, v))
            if i < len(lst):
                w = lst[i][2]
                consider(lst[i][0] - w.length - arc, w.speed)
            if arc <= route.box_entry_arc:
                elst = self._ext_occ.get((k, movement.approach.value, movement.lane), ())
                j = bisect_right(elst, (arc, v.vid, v))
                if j < len(elst):
                    arc_w, _, w = elst[j]
                    if arc_w - w.length <= route.box_entry_arc + 1e-9:
                        consider(arc_w - w.length - arc, w.speed)
            if best is None and v.seg_idx + 1 < len(v.segments):
                nxt = v.segments[v.seg_idx + 1]
                lst2 = self._seg_occ.get(nxt.lane_key, ())
                if lst2:
                    pos_w, _, w = lst2[0]
                    consider((seg.end - v.s) + pos_w - w.length, w.speed)
        return best

    def _receiving_space(self, v: Vehicle) -> float:
        """Free meters beyond the conflict box on this vehicle's receiving
        lane; used to keep vehicles from entering a box they cannot clear."""
        hop = v.hop_idx
        k, movement = v.hops[hop]
        route = v.routes[hop]
        lanes = self.network.grids[0].lanes_per_approach
        space = float("inf")
        key = ("recv", k, exit_heading(movement), receiving_lane(movement, lanes))
        if key in self._recv_occ:
            space = min(space, self._recv_occ[key])
        grid_seg_idx = v.hop_seg[hop]
        if grid_seg_idx + 1 < len(v.segments):
            nxt = v.segments[grid_seg_idx + 1]
            lst = self._seg_occ.get(nxt.lane_key, ())
            if lst:
                pos_w, _, w = lst[0]
                tail = route.total_length - route.box_exit_arc
                space = min(space, tail + pos_w - w.length)
        return space

    # -- the step ----------------------------------------------------------

    def step(self) -> StepResult:
        k = self.k
        dt = k.dt
        t = self.step_idx * dt
        sink = self.sink

        # activate scheduled arrivals at this step boundary
        arrivals = self.schedule.arrivals
        while self._arrival_idx < len(arrivals) and arrivals[self._arrival_idx].entry_time <= t + 1e-9:
            spec = arrivals[self._arrival_idx]
            v = Vehicle(self.entered, spec, self.network)
            v.entry_time = t
            self.pending.setdefault(v.segments[0].lane_key, deque()).append(v)
            self.entered += 1
            self._arrival_idx += 1
            if sink is not None:
                k0, app0 = spec.entry
                itin = ";".join(
                    f"{kk}:{m.approach.value}:{m.lane}:{m.turn.value}" for kk, m in spec.hops
                )
                sink.event(EnterEvent(
                    step=self.step_idx, time=t, vehicle=v.vid, intersection=k0,
                    approach=app0.value, itinerary=itin,
                    # travel distance: the nose is inserted one body length in
                    journey_length=v.journey_length - v.length,
                    scheduled_time=spec.entry_time,
                ))

        self._build_indexes()

        # insert pending vehicles where the leg has room
        for lane_key in sorted(self.pending, key=repr):
            queue = self.pending[lane_key]
            while queue:
                v = queue[0]
                lst = self._seg_occ.get(lane_key, [])
                rear_stop_end = None
                if lst:
                    pos_w, _, w = lst[0]
                    rear_stop_end = pos_w - w.length + stop_distance(w.speed, k)
                v0 = max_entry_speed(rear_stop_end, v.length, k, self.margin)
                if v0 is None:
                    break
                queue.popleft()
                v.inserted = True
                v.s = v.length
                v.speed = v0
                self.vehicles.append(v)
                insort(self._seg_occ.setdefault(lane_key, []), (v.s, v.vid, v))

        # leaders, queues, streams
        leaders: Dict[tuple, int] = {}
        leader_vehicles: Dict[int, Vehicle] = {}
        queues: Dict[tuple, int] = {}
        for v in self.vehicles:
            v.stream_now = v.stream()
            if v.stream_now is not None:
                if v.speed < self.queue_threshold:
                    queues[v.stream_now] = queues.get(v.stream_now, 0) + 1
                on = v.on_grid_arc()
                if on is not None and v.seg_idx == v.hop_seg[v.hop_idx]:
                    _, _, route, arc = on
                    if arc < route.box_exit_arc:
                        cur = leaders.get(v.stream_now)
                        if cur is None or arc > (leader_vehicles[cur].s - leader_vehicles[cur].segments[leader_vehicles[cur].seg_idx].start):
                            leaders[v.stream_now] = v.vid
                            leader_vehicles[v.vid] = v
        leader_vehicles = {vid: leader_vehicles[vid] for vid in leaders.values()}

        leader_states: Dict[int, Tuple[float, float, float, int]] = {}
        for stream, vid in leaders.items():
            v = leader_vehicles[vid]
            _, _, route, arc = v.on_grid_arc()
            leader_states[vid] = (v.speed, arc, route.total_length, queues.get(stream, 0))
        self.last_queues = queues
        self.last_leaders = leaders
        self.last_leader_states = leader_states

        decision: ControlDecision = self.controller.decide(self)
        go = decision.go

        # coordination groups over leader desired-cell sets
        desired = []
        for stream in sorted(leaders):
            v = leader_vehicles[leaders[stream]]
            _, _, route, arc = v.on_grid_arc()
            state = VehicleState(id=v.vid, route=route, position=arc,
                                 speed=v.speed, length=v.length)
            desired.append(desired_cells(state, k, step=self.step_idx))
        groups = detect_conflicts(desired)
        leader_groups: Dict[int, Tuple[int, bool, Tuple[int, ...]]] = {}
        for g in groups:
            for vid in g.members:
                leader_groups[vid] = (g.group_id, g.coordinated, g.members)

        # proposals: controller action for leaders, safe following for the rest
        proposals: Dict[int, Action] = {}
        for v in self.vehicles:
            gap = self._gap_ahead(v)
            free = (
                Action.ACCELERATE
                if gap is None
                else safe_action_for_gap(v.speed, gap[1], gap[0], k, self.margin)
            )
            want = decision.proposals.get(v.vid)
            if want is not None and want.value < free.value:
                free = want
            proposals[v.vid] = free

        # arbitration over every vehicle whose envelope touches grid cells.
        # Box crossing is atomic: an envelope may pass the stop line only
        # together with the vehicle's whole remaining path through the
        # conflict box, and from then on the vehicle holds that remaining
        # path in its prelock until it clears the box or brakes back to a
        # provable stop short of the line. Without this, stopped bodies can
        # block each other in a cycle and freeze the intersection.
        requests: List[ClaimRequest] = []
        final_actions: Dict[int, Action] = {}
        aux: Dict[int, Tuple[Vehicle, Optional[float], Dict[Action, float]]] = {}
        for v in self.vehicles:
            proposal = proposals[v.vid]
            hop_route = hop_seg_start = stop_line_s = None
            if v.hop_idx < len(v.hops):
                hop_route = v.routes[v.hop_idx]
                hop_seg_start = v.segments[v.hop_seg[v.hop_idx]].start
                stop_line_s = hop_seg_start + hop_route.box_entry_arc
            committed = stop_line_s is not None and v.committed_hop == v.hop_idx

            def box_path(from_s: float) -> Tuple[CellIndex, ...]:
                lo = max(from_s - hop_seg_start, hop_route.box_entry_arc)
                return hop_route.cells_between(lo, hop_route.box_exit_arc - 1e-9)

            prelock = v.grid_cells(v.s - v.length, v.s + stop_distance(v.speed, k))
            if committed:
                prelock = tuple(dict.fromkeys(prelock + box_path(max(v.s, stop_line_s))))
            envelopes: Dict[Action, Tuple[CellIndex, ...]] = {}
            touches = bool(prelock)
            ends: Dict[Action, float] = {}
            for value in range(proposal.value, Action.DECELERATE.value - 1, -1):
                action = Action(value)
                speed2, d = motion_delta(v.speed, action, k)
                hi = v.s + d + stop_distance(speed2, k)
                ends[action] = hi
                cells = v.grid_cells(v.s - v.length, hi)
                if (
                    stop_line_s is not None
                    and not committed
                    and hi > stop_line_s + 1e-9
                ):
                    cells = tuple(dict.fromkeys(cells + box_path(stop_line_s)))
                envelopes[action] = cells
                touches = touches or bool(cells)
            if not touches:
                final_actions[v.vid] = proposal
                continue

            line_blocked: Optional[Dict[Action, bool]] = None
            if stop_line_s is not None and v.s < stop_line_s:
                can_stop = v.s + stop_distance(v.speed, k) <= stop_line_s + 1e-9
                if can_stop:
                    k_id, movement = v.hops[v.hop_idx]
                    go_ok = True
                    if go is not None:
                        go_ok = movement.key() in go.get(k_id, frozenset())
                    space_ok = self._receiving_space(v) >= v.length + self.margin
                    if not (go_ok and space_ok):
                        line_blocked = {
                            a: ends[a] > stop_line_s + 1e-9 for a in envelopes
                        }
            nose = v.nose_cell()
            aux[v.vid] = (v, stop_line_s, ends)
            requests.append(ClaimRequest(
                vehicle_id=v.vid,
                priority=(v.entry_time, nose if nose[0] >= 0 else _FAR, v.vid),
                proposal=proposal,
                prelock=prelock,
                envelopes=envelopes,
                line_blocked=line_blocked,
            ))
        if requests:
            granted, _table = arbitrate(requests, step=self.step_idx)
            final_actions.update(granted)
            for vid, action in granted.items():
                v, stop_line_s, ends = aux[vid]
                if stop_line_s is None:
                    continue
                if ends[action] > stop_line_s + 1e-9:
                    v.committed_hop = v.hop_idx
                elif (
                    v.committed_hop == v.hop_idx
                    and v.s < stop_line_s
                    and v.s + stop_distance(v.speed, k) <= stop_line_s + 1e-9
                ):
                    # braked back behind the line: release the held box path
                    v.committed_hop = -1

        # execute motion, accrue delay shares, process exits
        stream_rewards: Dict[Optional[tuple], float] = {}
        exited: List[int] = []
        rows: List[StepRow] = []
        vmax = k.vmax
        for v in self.vehicles:
            action = final_actions[v.vid]
            speed2, d = motion_delta(v.speed, action, k)
            if v.s + d >= v.journey_length - 1e-12:
                dist = v.journey_length - v.s
                tau = time_to_cover(v.speed, action, k, min(dist, d) if d > 0 else 0.0)
                share = tau - dist / vmax
                v.s = v.journey_length
                v.speed = speed2
                exited.append(v.vid)
                if sink is not None:
                    sink.event(ExitEvent(step=self.step_idx, time=t + tau, vehicle=v.vid))
            else:
                share = dt - d / vmax
                v.s += d
                v.speed = speed2
                while v.seg_idx + 1 < len(v.segments) and v.s >= v.segments[v.seg_idx].end - 1e-12:
                    v.seg_idx += 1
                while v.hop_idx < len(v.hops):
                    seg = v.segments[v.hop_seg[v.hop_idx]]
                    route = v.routes[v.hop_idx]
                    if v.s >= seg.start + route.box_exit_arc - 1e-12:
                        v.hop_idx += 1
                    else:
                        break
            v.cumulative_delay += share
            stream_rewards[v.stream_now] = stream_rewards.get(v.stream_now, 0.0) - share
            if sink is not None:
                nose = v.nose_cell() if v.s < v.journey_length else (-1, -1, -1)
                cells = (
                    tuple((c.intersection_id, c.row, c.col)
                          for c in v.grid_cells(v.s - v.length, v.s))
                    if v.s < v.journey_length else ()
                )
                rows.append(StepRow(
                    step=self.step_idx, vehicle=v.vid, intersection=nose[0],
                    row=nose[1], col=nose[2], position=v.s, speed=v.speed,
                    action=int(action), group=leader_groups.get(v.vid, (-1,))[0],
                    reward_share=share, cells=cells,
                ))
            self.vehicle_steps += 1

        # vehicles still waiting at a full entry accrue a full stopped step
        for lane_key in sorted(self.pending, key=repr):
            for v in self.pending[lane_key]:
                share = dt
                v.cumulative_delay += share
                stream_rewards[v.stream()] = stream_rewards.get(v.stream(), 0.0) - share
                if sink is not None:
                    rows.append(StepRow(
                        step=self.step_idx, vehicle=v.vid, intersection=-1, row=-1,
                        col=-1, position=0.0, speed=0.0, action=-1, group=-1,
                        reward_share=share, cells=(),
                    ))
                self.vehicle_steps += 1

        if self.safety_checks:
            seen: Dict[CellIndex, int] = {}
            for v in self.vehicles:
                if v.s >= v.journey_length:
                    continue
                for cell in v.grid_cells(v.s - v.length, v.s):
                    other = seen.get(cell)
                    if other is not None and other != v.vid:
                        raise SafetyViolation(
                            f"step {self.step_idx}: vehicles {other} and {v.vid} "
                            f"co-occupy {cell}"
                        )
                    seen[cell] = v.vid

        if sink is not None:
            for row in rows:
                sink.step_row(row)

        if exited:
            exited_set = set(exited)
            self.vehicles = [v for v in self.vehicles if v.vid not in exited_set]
            self.exited_count += len(exited)

        self.total_reward += sum(stream_rewards.values())
        result = StepResult(
            step=self.step_idx,
            time=t,
            leaders=leaders,
            leader_states=leader_states,
            leader_groups=leader_groups,
            actions={vid: final_actions[vid] for vid in leaders.values()},
            stream_rewards=stream_rewards,
            exited=tuple(exited),
            vehicle_steps=len(self.vehicles) + len(exited)
            + sum(len(q) for q in self.pending.values()),
        )
        self.step_idx += 1
        return result

    def close(self) -> Dict:
        totals = {
            "total_reward": self.total_reward,
            "entered": self.entered,
            "exited": self.exited_count,
            "vehicle_steps": self.vehicle_steps,
            "steps": self.step_idx,
        }
        if self.sink is not None:
            self.sink.close(totals)
        return totals


def run_episode(
    network: CorridorNetwork,
    schedule: ArrivalSchedule,
    controller,
    n_steps: int,
    kinematics: KinematicsParams,
    sink=None,
    margin: float = 1.0,
    queue_threshold: float = 2.0,
    safety_checks: bool = True,
    meta: Optional[Dict] = None,
) -> Tuple[EpisodeLog, Dict]:
    """Run one fixed-length episode and return its log and totals.

    Deterministic: identical (network, schedule, controller state, steps)
    produce identical logs.
    """
    own_sink = sink is None
    if own_sink:
        sink = ListSink()
    world = World(
        network, schedule, controller, kinematics, sink=sink, margin=margin,
        queue_threshold=queue_threshold, safety_checks=safety_checks, meta=meta,
    )
    for _ in range(n_steps):
        world.step()
    totals = world.close()
    log = sink.log if isinstance(sink, ListSink) else None
    return log, totals
