"""Multi-agent deep Q-learning over the reservation world.

Every lane leader inside a controlled zone is an ephemeral agent with a
3-feature state (normalized speed, route progress, queue). Its per-step
reward is the negated delay accrued by its whole lane stream. Temporal
difference targets depend on how the agent's coordination status changed
between steps:

  same kind                r + gamma * max Q(s')
  coordinated->independent sum over the dissolved group's members of
                           [r_b + gamma * max Q(s'_b)]
  independent->coordinated r + gamma * max Q(s') / h   (h = new group size)

One record is written per group member. Training interleaves one gradient
step per simulation step against a lagged target network, with uniform
minibatch replay and a per-epoch epsilon decay, and the arrival seed is held
constant across epochs so the reward curve reflects learning alone.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .approximator import DenseNet
from .arrivals import entry_demand_map, generate_arrivals
from .geometry import CorridorConfig, GridConfig, build_corridor
from .kinematics import Action, KinematicsParams
from .reservation import TransitionType
from .world import StepResult, World


def encode_features(
    speed: float,
    vmax: float,
    position: float,
    total_length: float,
    queue: int,
    queue_cap: int = 20,
) -> np.ndarray:
    """Normalized (speed, route progress, queue) feature vector in [0,1]^3."""
    return np.array(
        [
            min(max(speed / vmax, 0.0), 1.0),
            min(max(position / total_length, 0.0), 1.0),
            min(max(queue / queue_cap, 0.0), 1.0),
        ]
    )


@dataclass(frozen=True)
class EncodedState:
    features: Tuple[float, float, float]

    def as_array(self) -> np.ndarray:
        return np.array(self.features)


def encode_state(leader_state: Tuple[float, float, float, int], vmax: float,
                 queue_cap: int = 20) -> EncodedState:
    speed, position, total_length, queue = leader_state
    return EncodedState(tuple(encode_features(speed, vmax, position, total_length,
                                              queue, queue_cap)))


def compute_reward(distances: Sequence[float], dt: float, vmax: float) -> float:
    """Negated summed delay of one direction's vehicles for one step."""
    return -sum(dt - d / vmax for d in distances)


@dataclass(frozen=True)
class TransitionRecord:
    state: Tuple[float, float, float]
    action: int
    reward: float
    next_state: Optional[Tuple[float, float, float]]  # None = terminal
    ttype: TransitionType
    h: int
    # (reward, next_state | None) per member of the dissolved group,
    # required for coordinated->independent targets
    group_snapshot: Optional[Tuple[Tuple[float, Optional[Tuple[float, float, float]]], ...]] = None


def td_target(rec: TransitionRecord, target_net: DenseNet, gamma: float) -> float:
    """Transition-typed TD target against the lagged target network."""
    if rec.ttype is TransitionType.COORDINATED_TO_INDEPENDENT:
        if rec.group_snapshot is None:
            raise ValueError("coordinated->independent record lacks group snapshot")
        total = 0.0
        for reward_b, next_b in rec.group_snapshot:
            future = 0.0 if next_b is None else float(np.max(target_net.forward(np.array(next_b))))
            total += reward_b + gamma * future
        return total
    if rec.next_state is None:
        return rec.reward
    future = float(np.max(target_net.forward(np.array(rec.next_state))))
    if rec.ttype is TransitionType.INDEPENDENT_TO_COORDINATED:
        return rec.reward + gamma * future / rec.h
    return rec.reward + gamma * future


class ReplayMemory:
    """FIFO ring of recent transitions with seeded uniform sampling."""

    def __init__(self, capacity: int = 10_000, seed: int = 0) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: List[TransitionRecord] = []
        self._head = 0
        self.rng = np.random.default_rng(seed)

    def push(self, rec: TransitionRecord) -> None:
        if len(self._data) < self.capacity:
            self._data.append(rec)
        else:
            self._data[self._head] = rec
            self._head = (self._head + 1) % self.capacity

    def extend(self, recs: Sequence[TransitionRecord]) -> None:
        for rec in recs:
            self.push(rec)

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, rec: TransitionRecord) -> bool:
        return rec in self._data

    def sample(self, n: int = 32) -> List[TransitionRecord]:
        idx = self.rng.choice(len(self._data), size=n, replace=False)
        return [self._data[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    initial: float = 1.0
    decay: float = 0.999
    floor: float = 0.01

    def value(self, epoch: int) -> float:
        return max(self.floor, self.initial * self.decay**epoch)


def train_step(
    memory: ReplayMemory,
    net: DenseNet,
    target_net: DenseNet,
    gamma: float,
    batch_size: int = 32,
    lr: float = 1e-3,
) -> Optional[float]:
    """Sample a minibatch, build transition-typed targets, take one gradient
    step on the taken actions' outputs. Returns the pre-step loss, or None
    when the memory cannot fill a batch yet."""
    if len(memory) < batch_size:
        return None
    batch = memory.sample(batch_size)
    inputs = np.array([rec.state for rec in batch])
    actions = np.array([rec.action for rec in batch])
    targets = np.array([td_target(rec, target_net, gamma) for rec in batch])
    return net.fit_batch(inputs, actions, targets, lr)


@dataclass
class TrainerConfig:
    epochs: int = 100
    steps_per_epoch: int = 1500
    dt: float = 1.0
    gamma: float = 0.9
    target_update_epochs: int = 5
    replay_capacity: int = 10_000
    batch_size: int = 32
    warmup: int = 500
    learning_rate: float = 1e-3
    hidden: Tuple[int, ...] = (64, 64)
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    major_veh_hr: float = 2500.0
    minor_veh_hr: float = 1500.0
    generation_window: float = 900.0
    arrival_seed: int = 1
    seed: int = 1
    checkpoint_every: int = 100
    queue_cap: int = 20
    # training network topology
    lanes_per_approach: int = 3
    extension_cells: int = 5
    cell_size: float = 2.5
    leg_length: float = 2000.0
    vmax: float = 11.17
    a_acc: float = 3.5
    a_dec: float = 7.0
    margin: float = 1.0
    queue_threshold: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


class TransitionCollector:
    """Builds TransitionRecords across consecutive steps.

    A leader's record opens with its state, executed action, and stream
    reward, and closes on the next step once its new state and coordination
    status are known; leaders that stop being agents close as terminal.
    """

    def __init__(self, vmax: float, queue_cap: int) -> None:
        self.vmax = vmax
        self.queue_cap = queue_cap
        self._open: Dict[int, dict] = {}

    def _encode(self, leader_state) -> Tuple[float, float, float]:
        speed, arc, total, queue = leader_state
        return tuple(encode_features(speed, self.vmax, arc, total, queue, self.queue_cap))

    def observe(self, res: StepResult) -> List[TransitionRecord]:
        done: List[TransitionRecord] = []
        states_now = {vid: self._encode(s) for vid, s in res.leader_states.items()}
        next_reward = {vid: res.stream_rewards.get(stream, 0.0)
                       for stream, vid in res.leaders.items()}

        for vid, rec in sorted(self._open.items()):
            still = vid in states_now
            next_state = states_now.get(vid)
            if not still:
                done.append(TransitionRecord(
                    state=rec["state"], action=rec["action"], reward=rec["reward"],
                    next_state=None, ttype=TransitionType.SAME_KIND, h=1,
                ))
                continue
            was_coord = rec["coordinated"]
            now_gid, now_coord, now_members = res.leader_groups[vid]
            if was_coord == now_coord:
                ttype, h, snapshot = TransitionType.SAME_KIND, (len(now_members) if now_coord else 1), None
            elif was_coord and not now_coord:
                ttype = TransitionType.COORDINATED_TO_INDEPENDENT
                h = len(rec["members"])
                snapshot = tuple(
                    (
                        self._open[m]["reward"] if m in self._open else 0.0,
                        states_now.get(m),
                    )
                    for m in rec["members"]
                )
            else:
                ttype = TransitionType.INDEPENDENT_TO_COORDINATED
                h = len(now_members)
                snapshot = None
            done.append(TransitionRecord(
                state=rec["state"], action=rec["action"], reward=rec["reward"],
                next_state=next_state, ttype=ttype, h=h, group_snapshot=snapshot,
            ))
        self._open = {}
        for stream, vid in res.leaders.items():
            gid, coordinated, members = res.leader_groups[vid]
            self._open[vid] = {
                "state": states_now[vid],
                "action": int(res.actions[vid]),
                "reward": next_reward[vid],
                "coordinated": coordinated,
                "members": members,
            }
        return done

    def finish(self) -> List[TransitionRecord]:
        done = [
            TransitionRecord(
                state=rec["state"], action=rec["action"], reward=rec["reward"],
                next_state=None, ttype=TransitionType.SAME_KIND, h=1,
            )
            for vid, rec in sorted(self._open.items())
        ]
        self._open = {}
        return done


def training_network(cfg: TrainerConfig):
    return build_corridor(CorridorConfig(
        n_intersections=1,
        grid=GridConfig(
            cell_size=cfg.cell_size,
            lanes_per_approach=cfg.lanes_per_approach,
            extension_cells=cfg.extension_cells,
        ),
        leg_length=cfg.leg_length,
    ))


def run_training(cfg: TrainerConfig, out_dir: str, quiet: bool = True) -> Dict:
    """Full training loop on the single-intersection topology.

    Emits reward_curve.csv (epoch, epsilon, global_reward, mean_loss),
    periodic checkpoints, and model_final.bin under out_dir. Returns a
    summary dict with the trained net.
    """
    from .control import DsclsController  # deferred: control imports learn

    os.makedirs(out_dir, exist_ok=True)
    network = training_network(cfg)
    kin = KinematicsParams(a_acc=cfg.a_acc, a_dec=cfg.a_dec, vmax=cfg.vmax, dt=cfg.dt)
    demand = entry_demand_map(network, cfg.major_veh_hr, cfg.minor_veh_hr)
    # one constant-seed schedule shared by every epoch
    schedule = generate_arrivals(network, demand, cfg.generation_window, cfg.arrival_seed)

    net = DenseNet([3, *cfg.hidden, 3], seed=cfg.seed)
    target = net.clone()
    memory = ReplayMemory(cfg.replay_capacity, seed=cfg.seed)
    eps_schedule = cfg.epsilon

    curve: List[Tuple[int, float, float, float]] = []
    for epoch in range(cfg.epochs):
        epsilon = eps_schedule.value(epoch)
        controller = DsclsController(
            net, epsilon=epsilon, seed=cfg.seed * 1_000_003 + epoch,
            queue_cap=cfg.queue_cap,
        )
        world = World(
            network, schedule, controller, kin, sink=None,
            margin=cfg.margin, queue_threshold=cfg.queue_threshold,
        )
        collector = TransitionCollector(cfg.vmax, cfg.queue_cap)
        losses: List[float] = []
        for _ in range(cfg.steps_per_epoch):
            res = world.step()
            memory.extend(collector.observe(res))
            if len(memory) >= max(cfg.warmup, cfg.batch_size):
                loss = train_step(memory, net, target, cfg.gamma,
                                  cfg.batch_size, cfg.learning_rate)
                if loss is not None:
                    losses.append(loss)
        memory.extend(collector.finish())
        if (epoch + 1) % cfg.target_update_epochs == 0:
            target = net.clone()
        mean_loss = sum(losses) / len(losses) if losses else 0.0
        curve.append((epoch, epsilon, world.total_reward, mean_loss))
        if not quiet:
            print(f"epoch {epoch:4d} eps {epsilon:.4f} reward {world.total_reward:10.2f} "
                  f"loss {mean_loss:.5f}")
        if cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            net.save(os.path.join(out_dir, f"model_epoch{epoch + 1:05d}.bin"))

    curve_path = os.path.join(out_dir, "reward_curve.csv")
    with open(curve_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "epsilon", "global_reward", "mean_loss"])
        for row in curve:
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
    model_path = os.path.join(out_dir, "model_final.bin")
    net.save(model_path)
    return {
        "net": net,
        "curve": curve,
        "curve_path": curve_path,
        "model_path": model_path,
    }
