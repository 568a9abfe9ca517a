"""Discrete-time vehicle kinematics.

All vehicles share one action set (decelerate, maintain, accelerate) with
fixed acceleration and deceleration rates. Motion within a step is
piecewise-constant acceleration, split at the instant speed hits 0 or the
speed limit, so position never overshoots the clamp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional, Tuple


class Action(IntEnum):
    """Stable {0,1,2} encoding; the order doubles as aggressiveness."""

    DECELERATE = 0
    MAINTAIN = 1
    ACCELERATE = 2


@dataclass(frozen=True)
class KinematicsParams:
    a_acc: float = 3.5
    a_dec: float = 7.0
    vmax: float = 11.17
    dt: float = 1.0

    def __post_init__(self) -> None:
        if self.a_acc <= 0 or self.a_dec <= 0 or self.vmax <= 0 or self.dt <= 0:
            raise ValueError("kinematic parameters must be positive")


@dataclass
class VehicleState:
    """Kinematic state of one vehicle along its route."""

    id: int
    route: object  # RoutePath or None for off-grid bookkeeping
    position: float
    speed: float
    length: float = 4.90
    entry_time: float = 0.0
    is_leader: bool = False
    cumulative_delay: float = 0.0


def stop_distance(speed: float, k: KinematicsParams) -> float:
    return speed * speed / (2.0 * k.a_dec)


def motion_delta(speed: float, action: Action, k: KinematicsParams) -> Tuple[float, float]:
    """(new_speed, distance) for one step, clamping speed to [0, vmax] with
    piecewise integration at the clamp instant."""
    dt = k.dt
    if action is Action.MAINTAIN:
        return speed, speed * dt
    if action is Action.ACCELERATE:
        t_clamp = (k.vmax - speed) / k.a_acc
        if t_clamp >= dt:
            return speed + k.a_acc * dt, speed * dt + 0.5 * k.a_acc * dt * dt
        d = speed * t_clamp + 0.5 * k.a_acc * t_clamp * t_clamp
        return k.vmax, d + k.vmax * (dt - t_clamp)
    t_stop = speed / k.a_dec
    if t_stop >= dt:
        return speed - k.a_dec * dt, speed * dt - 0.5 * k.a_dec * dt * dt
    return 0.0, stop_distance(speed, k)


def time_to_cover(speed: float, action: Action, k: KinematicsParams, dist: float) -> float:
    """Time within one step until the vehicle has traveled dist.

    Requires dist to be reachable within the step (dist <= the step's
    motion_delta distance).
    """
    if dist <= 0.0:
        return 0.0
    dt = k.dt
    if action is Action.MAINTAIN:
        return dist / speed
    if action is Action.ACCELERATE:
        a = k.a_acc
        t_clamp = (k.vmax - speed) / a
        t1 = min(t_clamp, dt)
        d1 = speed * t1 + 0.5 * a * t1 * t1
        if dist <= d1 + 1e-12:
            return (-speed + math.sqrt(speed * speed + 2.0 * a * dist)) / a
        return t1 + (dist - d1) / k.vmax
    a = k.a_dec
    t_stop = min(speed / a, dt)
    d1 = speed * t_stop - 0.5 * a * t_stop * t_stop
    if dist > d1 + 1e-12:
        raise ValueError("distance not reachable while braking")
    disc = max(speed * speed - 2.0 * a * dist, 0.0)
    return (speed - math.sqrt(disc)) / a


def apply_action(v: VehicleState, action: Action, k: KinematicsParams) -> VehicleState:
    """Advance one vehicle one step. Total on valid states; speed stays in
    [0, vmax] and position never decreases."""
    new_speed, d = motion_delta(v.speed, action, k)
    return replace(v, speed=new_speed, position=v.position + d)


def safe_action_for_gap(
    speed: float,
    leader_speed: float,
    gap: float,
    k: KinematicsParams,
    margin: float = 1.0,
) -> Action:
    """Most aggressive action that keeps stopping-distance separation.

    gap is nose-to-rear-bumper distance to the leader on the same axis. An
    action is admissible when the follower's post-action stop envelope stays
    at least `margin` behind the point where the leader would come to rest
    if it started braking now. Decelerate is always returned as a fallback;
    it preserves the envelope inequality whenever it held before.
    """
    budget = gap + stop_distance(leader_speed, k) - margin
    for action in (Action.ACCELERATE, Action.MAINTAIN):
        new_speed, d = motion_delta(speed, action, k)
        if d + stop_distance(new_speed, k) <= budget + 1e-9:
            return action
    return Action.DECELERATE


def follower_update(
    v: VehicleState, leader: VehicleState, k: KinematicsParams, margin: float = 1.0
) -> Action:
    """Safe-following rule for vehicles behind a leader on the same lane."""
    gap = leader.position - leader.length - v.position
    return safe_action_for_gap(v.speed, leader.speed, gap, k, margin)


def max_entry_speed(
    leader_rear_stop_end: Optional[float],
    entry_nose: float,
    k: KinematicsParams,
    margin: float = 1.0,
) -> Optional[float]:
    """Fastest insertion speed that satisfies the stop-envelope inequality
    against the rearmost vehicle already on the lane, or None if even a
    standstill insertion would violate it."""
    if leader_rear_stop_end is None:
        return k.vmax
    room = leader_rear_stop_end - margin - entry_nose
    if room < 0.0:
        return None
    return min(k.vmax, math.sqrt(2.0 * k.a_dec * room))
