"""Controllers: fixed-time signal, actuated signal, longest-queue-first, the
learned sparse-coordination policy, and a uniform-random baseline.

Signals are modeled as stop-line constraints consumed by the reservation
arbiter: movements not in the active phase's go set may not claim cells past
the stop line (unless physically unable to stop). Every controller therefore
rides on the same safety mechanism; they differ only in how they choose who
goes.

Phase sets are derived from geometry. With L-shaped turn rasterization,
opposing left turns sweep overlapping cells, so the default four-phase plan
serves one approach at a time (split phasing) rather than pairing opposing
movements; compatibility inside each phase is checked against the grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .approximator import DenseNet
from .geometry import Approach, IntersectionGrid, Movement
from .kinematics import Action
from .world import ControlDecision, World


class ControllerKind(Enum):
    FIXED_SIGNAL = "fixed"
    ACTUATED_SIGNAL = "actuated"
    LQF = "lqf"
    DSCLS = "dscls"
    RANDOM_POLICY = "random"


MovementKey = Tuple[str, int, str]


@dataclass(frozen=True)
class QueueMeasure:
    intersection: int
    approach: str
    lane: int
    queued_count: int
    step: int


def queue_length(world: World, intersection: int, approach: str, lane: int) -> QueueMeasure:
    """Vehicles headed for an approach lane (on the grid or queued upstream
    of it) moving slower than the queue threshold."""
    stream = (intersection, approach, lane)
    count = 0
    for v in world.vehicles:
        if v.stream() == stream and v.speed < world.queue_threshold:
            count += 1
    return QueueMeasure(intersection, approach, lane, count, world.step_idx)


def conflicting(grid: IntersectionGrid, a: Movement, b: Movement) -> bool:
    """Two movements conflict when their rasterized paths share a cell
    inside the conflict box."""
    box_a = {c for c in grid.routes[a].cells if grid.in_box(c)}
    box_b = {c for c in grid.routes[b].cells if grid.in_box(c)}
    return bool(box_a & box_b)


def default_phases(grid: IntersectionGrid) -> Tuple[FrozenSet[MovementKey], ...]:
    """Four-phase split plan: all movements of one approach per phase,
    arterial approaches first."""
    order = (Approach.W, Approach.E, Approach.N, Approach.S)
    phases = []
    for approach in order:
        keys = frozenset(
            m.key() for m in grid.movements() if m.approach is approach
        )
        phases.append(keys)
    return tuple(phases)


def validate_phases(
    grid: IntersectionGrid, phases: Sequence[FrozenSet[MovementKey]]
) -> None:
    by_key = {m.key(): m for m in grid.movements()}
    covered = set()
    for phase in phases:
        movements = [by_key[k] for k in phase]
        covered.update(phase)
        for i, a in enumerate(movements):
            for b in movements[i + 1:]:
                if a.approach is not b.approach and conflicting(grid, a, b):
                    raise ValueError(f"phase pairs conflicting movements {a} / {b}")
    missing = set(by_key) - covered
    if missing:
        raise ValueError(f"phases do not cover movements: {sorted(missing)}")


@dataclass(frozen=True)
class SignalPlan:
    phases: Tuple[FrozenSet[MovementKey], ...]
    cycle: float = 90.0
    greens: Tuple[float, ...] = (27.0, 27.0, 14.0, 14.0)
    offset: float = 0.0
    all_red: float = 2.0
    min_green: float = 8.0
    max_green: float = 40.0
    gap_time: float = 3.0
    detector_length: float = 30.0

    def __post_init__(self) -> None:
        if len(self.greens) != len(self.phases):
            raise ValueError("one green split per phase required")
        total = sum(self.greens) + self.all_red * len(self.phases)
        if abs(total - self.cycle) > 1e-6:
            raise ValueError(f"splits {total} do not sum to cycle {self.cycle}")
        if self.min_green > self.max_green:
            raise ValueError("min_green exceeds max_green")


def fixed_signal_step(plan: SignalPlan, t: float) -> Optional[int]:
    """Active phase index at time t, or None during all-red clearance.
    Periodic: t and t + cycle give identical output."""
    pos = (t + plan.offset) % plan.cycle
    for i, green in enumerate(plan.greens):
        if pos < green:
            return i
        pos -= green
        if pos < plan.all_red:
            return None
        pos -= plan.all_red
    return len(plan.phases) - 1  # float fuzz at the cycle boundary


@dataclass
class ActuatedState:
    phase: int = 0
    phase_start: float = 0.0
    last_actuation: float = 0.0
    in_all_red: bool = False
    red_start: float = 0.0
    next_phase: int = 0


def actuated_signal_step(
    plan: SignalPlan,
    actuations: Mapping[int, bool],
    t: float,
    state: ActuatedState,
    rest_phase: int = 0,
) -> Tuple[ActuatedState, Optional[int]]:
    """Gap-out / max-out green termination.

    Green holds at least min_green, extends while detections arrive within
    gap_time of each other, gaps out when idle for gap_time after min_green,
    and maxes out at max_green. The next phase is the next one in the ring
    with demand; with no demand anywhere the signal rests on rest_phase.
    """
    if state.in_all_red:
        if t - state.red_start >= plan.all_red - 1e-9:
            state = ActuatedState(
                phase=state.next_phase, phase_start=t, last_actuation=t,
            )
        else:
            return state, None

    if actuations.get(state.phase, False):
        state = replace(state, last_actuation=t)
    green = t - state.phase_start
    gap_out = green >= plan.min_green - 1e-9 and (t - state.last_actuation) >= plan.gap_time - 1e-9
    max_out = green >= plan.max_green - 1e-9
    if gap_out or max_out:
        n = len(plan.phases)
        nxt = None
        for i in range(1, n + 1):
            cand = (state.phase + i) % n
            if cand != state.phase and actuations.get(cand, False):
                nxt = cand
                break
        if nxt is None and state.phase != rest_phase and not actuations.get(state.phase, False):
            nxt = rest_phase
        if nxt is not None:
            state = replace(state, in_all_red=True, red_start=t, next_phase=nxt)
            return state, None
        # re-serve: still the only phase with demand, or resting
        state = replace(state, phase_start=t)
    return state, state.phase


@dataclass
class LqfState:
    phase: int = 0
    since: float = 0.0


def lqf_core(
    queues_by_phase: Sequence[int], state: LqfState, t: float, min_service: float
) -> LqfState:
    """Serve the compatible-movement set with the longest total queue, held
    for a minimum service time; ties go to the lowest phase index, and with
    all queues empty the current selection holds."""
    if t - state.since < min_service - 1e-9:
        return state
    best = max(queues_by_phase)
    if best <= 0:
        return state
    chosen = queues_by_phase.index(best)
    if chosen != state.phase:
        return LqfState(phase=chosen, since=t)
    return state


class FixedSignalController:
    kind = ControllerKind.FIXED_SIGNAL

    def __init__(self, plan: SignalPlan, offsets: Optional[Dict[int, float]] = None) -> None:
        self.plan = plan
        self.offsets = offsets or {}

    def start_episode(self, world: World) -> None:
        for grid in world.network.grids:
            validate_phases(grid, self.plan.phases)

    def decide(self, world: World) -> ControlDecision:
        t = world.step_idx * world.k.dt
        go: Dict[int, FrozenSet[MovementKey]] = {}
        for grid in world.network.grids:
            phase = fixed_signal_step(
                replace(self.plan, offset=self.plan.offset + self.offsets.get(grid.id, 0.0)), t
            )
            go[grid.id] = self.plan.phases[phase] if phase is not None else frozenset()
        return ControlDecision(go=go)


class ActuatedSignalController:
    kind = ControllerKind.ACTUATED_SIGNAL

    def __init__(self, plan: SignalPlan) -> None:
        self.plan = plan
        self.states: Dict[int, ActuatedState] = {}

    def start_episode(self, world: World) -> None:
        self.states = {}
        for grid in world.network.grids:
            validate_phases(grid, self.plan.phases)
            self.states[grid.id] = ActuatedState()

    def _actuations(self, world: World, grid: IntersectionGrid) -> Dict[int, bool]:
        phase_of: Dict[MovementKey, int] = {}
        for i, phase in enumerate(self.plan.phases):
            for key in phase:
                phase_of[key] = i
        hits = {i: False for i in range(len(self.plan.phases))}
        for v in world.vehicles:
            if v.hop_idx >= len(v.hops):
                continue
            k, movement = v.hops[v.hop_idx]
            if k != grid.id:
                continue
            route = v.routes[v.hop_idx]
            stop_line_s = v.segments[v.hop_seg[v.hop_idx]].start + route.box_entry_arc
            dist = stop_line_s - v.s
            if 0.0 <= dist <= self.plan.detector_length:
                hits[phase_of[movement.key()]] = True
        return hits

    def decide(self, world: World) -> ControlDecision:
        t = world.step_idx * world.k.dt
        go: Dict[int, FrozenSet[MovementKey]] = {}
        for grid in world.network.grids:
            actuations = self._actuations(world, grid)
            state, phase = actuated_signal_step(self.plan, actuations, t, self.states[grid.id])
            self.states[grid.id] = state
            go[grid.id] = self.plan.phases[phase] if phase is not None else frozenset()
        return ControlDecision(go=go)


class LqfController:
    kind = ControllerKind.LQF

    def __init__(self, phases: Tuple[FrozenSet[MovementKey], ...], min_service: float = 5.0) -> None:
        self.phases = phases
        self.min_service = min_service
        self.states: Dict[int, LqfState] = {}

    def start_episode(self, world: World) -> None:
        self.states = {}
        for grid in world.network.grids:
            validate_phases(grid, self.phases)
            self.states[grid.id] = LqfState(phase=0, since=-self.min_service)

    def decide(self, world: World) -> ControlDecision:
        t = world.step_idx * world.k.dt
        go: Dict[int, FrozenSet[MovementKey]] = {}
        for grid in world.network.grids:
            queues = []
            for phase in self.phases:
                lanes = sorted({(key[0], key[1]) for key in phase})
                queues.append(
                    sum(world.last_queues.get((grid.id, app, lane), 0) for app, lane in lanes)
                )
            state = lqf_core(queues, self.states[grid.id], t, self.min_service)
            self.states[grid.id] = state
            go[grid.id] = self.phases[state.phase]
        return ControlDecision(go=go)


class DsclsController:
    """Per-leader epsilon-greedy policy over the trained Q approximator.
    With epsilon 0 the policy is deterministic for a given net and world."""

    kind = ControllerKind.DSCLS

    def __init__(
        self, net: DenseNet, epsilon: float = 0.0, seed: int = 0, queue_cap: int = 20
    ) -> None:
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if net.n_inputs != 3 or net.n_outputs != 3:
            raise ValueError(
                f"policy net must be 3 -> 3, got {net.n_inputs} -> {net.n_outputs}"
            )
        self.net = net
        self.epsilon = epsilon
        self.seed = seed
        self.queue_cap = queue_cap
        self.rng = np.random.default_rng(seed)

    def start_episode(self, world: World) -> None:
        self.rng = np.random.default_rng(self.seed)

    def decide(self, world: World) -> ControlDecision:
        from .learn import encode_features  # local import avoids a cycle

        proposals: Dict[int, Action] = {}
        vmax = world.k.vmax
        for stream in sorted(world.last_leaders):
            vid = world.last_leaders[stream]
            speed, arc, total, queue = world.last_leader_states[vid]
            if self.epsilon > 0.0 and self.rng.random() < self.epsilon:
                proposals[vid] = Action(int(self.rng.integers(0, 3)))
            else:
                features = encode_features(speed, vmax, arc, total, queue, self.queue_cap)
                q = self.net.forward(features)
                proposals[vid] = Action(int(np.argmax(q)))
        return ControlDecision(proposals=proposals, go=None)


class RandomPolicy:
    """Uniform random action per leader per step; the exploration floor the
    learned policy is graded against."""

    kind = ControllerKind.RANDOM_POLICY

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def start_episode(self, world: World) -> None:
        self.rng = np.random.default_rng(self.seed)

    def decide(self, world: World) -> ControlDecision:
        proposals = {
            world.last_leaders[stream]: Action(int(self.rng.integers(0, 3)))
            for stream in sorted(world.last_leaders)
        }
        return ControlDecision(proposals=proposals, go=None)


def dscls_policy_step(world: World, net: DenseNet, epsilon: float,
                      rng: Optional[np.random.Generator] = None,
                      queue_cap: int = 20) -> Dict[int, Action]:
    """One policy evaluation over the current leaders, without arbitration."""
    controller = DsclsController(net, epsilon=epsilon, queue_cap=queue_cap)
    if rng is not None:
        controller.rng = rng
    return controller.decide(world).proposals
