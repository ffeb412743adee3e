"""Dedicated minimal-risk-maneuver subsystem.

The subsystem continuously answers one question: if the vehicle had to
stop right now with nobody driving, could it? Capability is assessed as a
free corridor along the lane, long enough to brake from the current speed
at the comfort ceiling plus a standstill margin. Once started, a maneuver
consumes only the frozen plan and the vehicle state; it needs no control
link and no operator.

``straight_line_brake`` is the naive alternative kept for comparison: slam
the brakes, hold the wheel, look at nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .world import ControlInput, FollowerParams, Lane, Obstacle, VehicleState

DEFAULT_A_MAX = 4.0
DEFAULT_COMFORT_DECEL = 2.0
DEFAULT_MARGIN_M = 5.0
DEFAULT_CORRIDOR_WIDTH_M = 3.0
DEFAULT_SENSING_RANGE_M = 200.0
DEFAULT_TRIGGER_MARGIN_M = 2.0


@dataclass(frozen=True)
class MrmParams:
    a_max: float = DEFAULT_A_MAX
    comfort_decel_mps2: float = DEFAULT_COMFORT_DECEL
    margin_m: float = DEFAULT_MARGIN_M
    corridor_width_m: float = DEFAULT_CORRIDOR_WIDTH_M
    sensing_range_m: float = DEFAULT_SENSING_RANGE_M
    # capability margin below which a maneuver is triggered pre-emptively,
    # so planning always happens while still capable
    trigger_margin_m: float = DEFAULT_TRIGGER_MARGIN_M

    def __post_init__(self):
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        if not 0 < self.comfort_decel_mps2 <= self.a_max:
            raise ValueError("comfort decel must be in (0, a_max]")
        if min(self.margin_m, self.corridor_width_m, self.sensing_range_m,
               self.trigger_margin_m) < 0:
            raise ValueError("MRM distances must be non-negative")


@dataclass(frozen=True)
class Corridor:
    """Obstacle-free stretch of lane ahead of the vehicle."""

    lane: Lane
    start_s: float
    length: float
    width: float

    def contains_point(self, x: float, y: float) -> bool:
        s, d = self.lane.project(x, y)
        return (self.start_s - 1e-9 <= s <= self.start_s + self.length + 1e-9
                and abs(d) <= self.width / 2.0 + 1e-9)


@dataclass(frozen=True)
class MrmCapability:
    capable: bool
    required_m: float
    available_m: float
    corridor: Corridor

    @property
    def margin(self) -> float:
        return self.available_m - self.required_m


@dataclass(frozen=True)
class MrmPlan:
    decel_mps2: float
    stop_distance_m: float
    start_s: float
    target_stop_s: float
    target_x: float
    target_y: float
    corridor: Corridor

    def lateral_error(self, state: VehicleState) -> float:
        _, d = self.corridor.lane.project(state.x, state.y)
        return d

    def off_corridor(self, state: VehicleState) -> bool:
        return abs(self.lateral_error(state)) > self.corridor.width / 2.0

    def done(self, state: VehicleState) -> bool:
        return state.speed <= 0.0


class MrmPlanningError(RuntimeError):
    pass


def _clip_to_band(poly: list[tuple[float, float]], half_width: float):
    """Sutherland-Hodgman clip of a convex polygon to |y| <= half_width."""
    for sign in (1.0, -1.0):
        if not poly:
            return []
        clipped = []
        for i in range(len(poly)):
            x1, y1 = poly[i]
            x2, y2 = poly[(i + 1) % len(poly)]
            in1 = sign * y1 <= half_width
            in2 = sign * y2 <= half_width
            if in1:
                clipped.append((x1, y1))
            if in1 != in2:
                t = (sign * half_width - y1) / (y2 - y1)
                clipped.append((x1 + t * (x2 - x1), y1 + t * (y2 - y1)))
        poly = clipped
    return poly


def blocked_intervals(lane: Lane, obstacles: list[Obstacle],
                      width: float) -> list[tuple[float, float]]:
    """Arclength intervals where an obstacle footprint enters the corridor
    band of the given width around the centerline."""
    intervals = []
    for s0, (x1, y1), (x2, y2) in lane.segments():
        seg_len = math.hypot(x2 - x1, y2 - y1)
        if seg_len == 0.0:
            continue
        ux, uy = (x2 - x1) / seg_len, (y2 - y1) / seg_len
        for obstacle in obstacles:
            local = []
            for px, py in obstacle.corners():
                rx, ry = px - x1, py - y1
                local.append((rx * ux + ry * uy, -rx * uy + ry * ux))
            clipped = _clip_to_band(local, width / 2.0)
            if not clipped:
                continue
            lo = max(0.0, min(p[0] for p in clipped))
            hi = min(seg_len, max(p[0] for p in clipped))
            if lo <= hi:
                intervals.append((s0 + lo, s0 + hi))
    intervals.sort()
    return intervals


def assess_capability(state: VehicleState, lane: Lane,
                      obstacles: list[Obstacle],
                      params: MrmParams) -> MrmCapability:
    """Required distance is the comfort-ceiling stopping distance plus the
    standstill margin; available is the free corridor ahead, capped by
    sensing range and the end of the mapped lane."""
    ego_s, _ = lane.project(state.x, state.y)
    nose_s = ego_s
    available = min(params.sensing_range_m, lane.length - nose_s)
    for lo, hi in blocked_intervals(lane, obstacles, params.corridor_width_m):
        if hi < nose_s:
            continue
        available = min(available, max(0.0, lo - nose_s))
        break
    available = max(0.0, available)
    required = state.speed ** 2 / (2.0 * params.a_max) + params.margin_m
    corridor = Corridor(lane=lane, start_s=nose_s, length=available,
                        width=params.corridor_width_m)
    return MrmCapability(capable=available >= required, required_m=required,
                         available_m=available, corridor=corridor)


def plan_mrm(state: VehicleState, cap: MrmCapability,
             params: MrmParams) -> MrmPlan:
    """Comfort-first constant-decel plan: brake at the comfort rate when the
    corridor allows, harder (up to the ceiling) only when it doesn't. Refuses
    to plan from an incapable assessment."""
    if not cap.capable:
        raise MrmPlanningError(
            f"not capable: need {cap.required_m:.1f} m, have {cap.available_m:.1f} m")
    v = state.speed
    if v <= 0.0:
        x, y, _ = cap.corridor.lane.point_at(cap.corridor.start_s)
        return MrmPlan(0.0, 0.0, cap.corridor.start_s, cap.corridor.start_s,
                       x, y, cap.corridor)
    comfort_distance = v ** 2 / (2.0 * params.comfort_decel_mps2)
    stop_distance = min(cap.available_m - params.margin_m, comfort_distance)
    decel = v ** 2 / (2.0 * stop_distance)
    if decel > params.a_max + 1e-9:
        raise MrmPlanningError(
            f"required decel {decel:.2f} exceeds ceiling {params.a_max:.2f}")
    decel = min(decel, params.a_max)
    target_s = cap.corridor.start_s + stop_distance
    x, y, _ = cap.corridor.lane.point_at(target_s)
    return MrmPlan(decel_mps2=decel, stop_distance_m=stop_distance,
                   start_s=cap.corridor.start_s, target_stop_s=target_s,
                   target_x=x, target_y=y, corridor=cap.corridor)


def execute_mrm_step(plan: MrmPlan, state: VehicleState,
                     a_max: float = DEFAULT_A_MAX) -> ControlInput:
    """One tick of maneuver execution from plan and vehicle state alone.

    Braking is closed-loop on remaining distance to the planned stop point,
    which absorbs integration error at any step size; steering holds the
    corridor centerline.
    """
    s, d = plan.corridor.lane.project(state.x, state.y)
    if state.speed <= 0.0:
        return ControlInput(0.0, 0.0)
    remaining = plan.target_stop_s - s
    if remaining <= 1e-6:
        decel = a_max
    else:
        decel = min(a_max, state.speed ** 2 / (2.0 * remaining))
    _, _, lane_heading = plan.corridor.lane.point_at(s)
    heading_err = _wrap_angle(lane_heading - state.heading)
    steering = heading_err + math.atan2(-1.2 * d, max(state.speed, 2.0))
    return ControlInput(steering_rad=steering, accel_mps2=-decel)


def _wrap_angle(a: float) -> float:
    while a > math.pi:
        a -= 2 * math.pi
    while a < -math.pi:
        a += 2 * math.pi
    return a


def straight_line_brake(state: VehicleState, decel: float,
                        dt: float) -> list[ControlInput]:
    """Naive baseline: constant full commanded deceleration, wheel straight,
    one input per tick until the speed profile reaches zero."""
    if decel <= 0:
        raise ValueError("decel must be positive")
    ticks = math.ceil(state.speed / (decel * dt)) if state.speed > 0 else 0
    return [ControlInput(0.0, -decel) for _ in range(ticks)]


# -- rear-end risk -------------------------------------------------------------

DecelProfile = list[tuple[float, float]]  # (duration_s, decel); last held


def constant_profile(decel: float) -> DecelProfile:
    return [(math.inf, decel)]


def plan_profile(plan: MrmPlan) -> DecelProfile:
    return constant_profile(plan.decel_mps2) if plan.decel_mps2 > 0 else []


@dataclass(frozen=True)
class RiskReport:
    collision: bool
    time_s: float = 0.0
    impact_speed_mps: float = 0.0
    min_gap_m: float = 0.0


def risk_of_rear_end(lead_speed: float, lead_profile: DecelProfile,
                     follower: FollowerParams, dt: float = 0.001,
                     horizon_s: float = 120.0) -> RiskReport:
    """Simulate a following vehicle against the lead's braking profile.

    The lead starts the profile at t=0; the follower holds speed for its
    reaction time past the first decelerating segment, then brakes at its
    own rate. Reported gap is lead rear bumper minus follower front bumper.
    """
    onset = 0.0
    for duration, decel in lead_profile:
        if decel > 0:
            break
        onset += duration
    brake_at = onset + follower.reaction_s

    lead_pos, lead_v = follower.gap_m, lead_speed
    fol_pos, fol_v = 0.0, follower.speed_mps
    t = 0.0
    min_gap = lead_pos - fol_pos
    seg_idx, seg_left = 0, lead_profile[0][0] if lead_profile else math.inf
    while t < horizon_s:
        lead_decel = lead_profile[seg_idx][1] if seg_idx < len(lead_profile) else 0.0
        lead_pos += lead_v * dt
        fol_pos += fol_v * dt
        lead_v = max(0.0, lead_v - lead_decel * dt)
        if t >= brake_at - 1e-12:
            fol_v = max(0.0, fol_v - follower.decel_mps2 * dt)
        t += dt
        seg_left -= dt
        if seg_idx < len(lead_profile) - 1 and seg_left <= 0:
            seg_idx += 1
            seg_left = lead_profile[seg_idx][0]
        gap = lead_pos - fol_pos
        min_gap = min(min_gap, gap)
        if gap <= 0.0:
            return RiskReport(collision=True, time_s=t,
                              impact_speed_mps=max(0.0, fol_v - lead_v),
                              min_gap_m=min_gap)
        if lead_v == 0.0 and fol_v == 0.0:
            break
    return RiskReport(collision=False, time_s=t, min_gap_m=min_gap)
