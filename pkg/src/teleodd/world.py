"""Plant and scripted environment: kinematic bicycle, lane geometry,
static obstacles, a reactive follower, and the sensing that turns all of
it into ODD snapshots.

Everything here is deterministic given the scenario script. The follower
is the one reactive element: it holds speed until the lead vehicle has
visibly braked for its reaction time, then decelerates at a fixed rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

from .link import LinkStats
from .odd import DomainSnapshot

log = logging.getLogger(__name__)

STEER_LIMIT_RAD = 0.6
ACCEL_MAX_MPS2 = 3.0
BRAKE_MAX_MPS2 = 8.0


@dataclass(frozen=True)
class ControlInput:
    steering_rad: float = 0.0
    accel_mps2: float = 0.0


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float
    wheelbase: float = 2.8


def clamp_control(u: ControlInput) -> ControlInput:
    steering = max(-STEER_LIMIT_RAD, min(STEER_LIMIT_RAD, u.steering_rad))
    accel = max(-BRAKE_MAX_MPS2, min(ACCEL_MAX_MPS2, u.accel_mps2))
    if steering != u.steering_rad or accel != u.accel_mps2:
        log.warning("control input clamped: steering %.3f -> %.3f, accel %.3f -> %.3f",
                    u.steering_rad, steering, u.accel_mps2, accel)
        return ControlInput(steering, accel)
    return u


def step_vehicle(s: VehicleState, u: ControlInput, dt: float) -> VehicleState:
    """Forward-Euler kinematic bicycle. Position advances along the current
    heading, then heading and speed update; speed never goes negative."""
    u = clamp_control(u)
    x = s.x + s.speed * math.cos(s.heading) * dt
    y = s.y + s.speed * math.sin(s.heading) * dt
    heading = s.heading + (s.speed / s.wheelbase) * math.tan(u.steering_rad) * dt
    speed = max(0.0, s.speed + u.accel_mps2 * dt)
    return replace(s, x=x, y=y, heading=heading, speed=speed)


# -- geometry ---------------------------------------------------------------

@dataclass(frozen=True)
class Obstacle:
    obstacle_id: str
    cx: float
    cy: float
    length: float
    width: float
    heading: float = 0.0

    def corners(self) -> list[tuple[float, float]]:
        return _rect_corners(self.cx, self.cy, self.length, self.width,
                             self.heading)


def _rect_corners(cx, cy, length, width, heading):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return [(cx + c * dx - s * dy, cy + s * dx + c * dy)
            for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))]


def rects_overlap(a: list[tuple[float, float]],
                  b: list[tuple[float, float]]) -> bool:
    """Separating-axis test for two convex quadrilaterals."""
    for poly in (a, b):
        for i in range(len(poly)):
            x1, y1 = poly[i]
            x2, y2 = poly[(i + 1) % len(poly)]
            ax, ay = y1 - y2, x2 - x1  # edge normal
            proj_a = [ax * px + ay * py for px, py in a]
            proj_b = [ax * px + ay * py for px, py in b]
            if max(proj_a) < min(proj_b) or max(proj_b) < min(proj_a):
                return False
    return True


class Lane:
    """Polyline centerline with arclength parametrization."""

    def __init__(self, points: list[tuple[float, float]], width: float):
        if len(points) < 2:
            raise ValueError("lane needs at least two points")
        self.points = points
        self.width = width
        self._cum = [0.0]
        for (x1, y1), (x2, y2) in zip(points, points[1:]):
            self._cum.append(self._cum[-1] + math.hypot(x2 - x1, y2 - y1))

    @property
    def length(self) -> float:
        return self._cum[-1]

    def segments(self):
        for i, ((x1, y1), (x2, y2)) in enumerate(zip(self.points, self.points[1:])):
            yield self._cum[i], (x1, y1), (x2, y2)

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Closest point on the centerline: (arclength s, signed lateral d),
        d positive to the left of travel."""
        best = (float("inf"), 0.0, 0.0)
        for s0, (x1, y1), (x2, y2) in self.segments():
            dx, dy = x2 - x1, y2 - y1
            seg_len = math.hypot(dx, dy)
            if seg_len == 0.0:
                continue
            t = max(0.0, min(1.0, ((x - x1) * dx + (y - y1) * dy) / seg_len ** 2))
            px, py = x1 + t * dx, y1 + t * dy
            dist = math.hypot(x - px, y - py)
            if dist < best[0]:
                lateral = ((x - x1) * -dy + (y - y1) * dx) / seg_len
                best = (dist, s0 + t * seg_len, lateral)
        return best[1], best[2]

    def point_at(self, s: float) -> tuple[float, float, float]:
        """(x, y, tangent heading) at arclength s, clamped to the lane."""
        s = max(0.0, min(self.length, s))
        for s0, (x1, y1), (x2, y2) in self.segments():
            seg_len = math.hypot(x2 - x1, y2 - y1)
            if s <= s0 + seg_len or s0 + seg_len == self.length:
                t = 0.0 if seg_len == 0.0 else (s - s0) / seg_len
                return (x1 + t * (x2 - x1), y1 + t * (y2 - y1),
                        math.atan2(y2 - y1, x2 - x1))
        x1, y1 = self.points[-2]
        x2, y2 = self.points[-1]
        return x2, y2, math.atan2(y2 - y1, x2 - x1)


# -- follower ----------------------------------------------------------------

@dataclass(frozen=True)
class FollowerParams:
    gap_m: float
    speed_mps: float
    reaction_s: float
    decel_mps2: float


@dataclass
class FollowerState:
    s: float                 # front bumper arclength
    speed: float
    brake_onset_s: float | None = None


def step_follower(fs: FollowerState, lead_speed: float, prev_lead_speed: float,
                  now_s: float, dt: float, params: FollowerParams) -> FollowerState:
    """Advance the follower one step. Braking starts one reaction time after
    the first tick the lead was seen slowing down."""
    onset = fs.brake_onset_s
    if onset is None and lead_speed < prev_lead_speed - 1e-12:
        onset = now_s
    speed = fs.speed
    s = fs.s + speed * dt
    if onset is not None and now_s >= onset + params.reaction_s:
        speed = max(0.0, speed - params.decel_mps2 * dt)
    return FollowerState(s=s, speed=speed, brake_onset_s=onset)


# -- world -------------------------------------------------------------------

@dataclass(frozen=True)
class WeatherRow:
    at_ms: int
    key: str
    value: object


@dataclass
class World:
    lane: Lane
    speed_limit_kmh: float = 80.0
    road_type: str = "highway"
    obstacles: list[Obstacle] = field(default_factory=list)
    construction: tuple[float, float] | None = None
    construction_lookahead_m: float = 30.0
    weather: list[WeatherRow] = field(default_factory=list)
    follower_params: FollowerParams | None = None
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    ads_cruise_mps: float = 13.9

    def __post_init__(self):
        self.weather = sorted(self.weather, key=lambda r: (r.at_ms, r.key))
        keys = {r.key for r in self.weather}
        for key in keys:
            first = min(r.at_ms for r in self.weather if r.key == key)
            if first > 0:
                raise ValueError(
                    f"weather timeline for {key} starts at {first} ms, not 0")

    def weather_at(self, now_ms: int) -> dict[str, object]:
        values: dict[str, object] = {}
        for row in self.weather:
            if row.at_ms <= now_ms:
                values[row.key] = row.value
        return values

    def construction_ahead(self, s: float) -> bool:
        if self.construction is None:
            return False
        zone_start, zone_end = self.construction
        return s <= zone_end and s + self.construction_lookahead_m >= zone_start

    def in_construction(self, s: float) -> bool:
        if self.construction is None:
            return False
        return self.construction[0] <= s <= self.construction[1]

    def make_follower(self, lead: VehicleState) -> FollowerState | None:
        if self.follower_params is None:
            return None
        lead_s, _ = self.lane.project(lead.x, lead.y)
        lead_rear = lead_s - self.vehicle_length / 2.0
        return FollowerState(s=lead_rear - self.follower_params.gap_m,
                             speed=self.follower_params.speed_mps)


def sense_environment(world: World, state: VehicleState, stats: LinkStats,
                      now_ms: int, mask: frozenset[str] | None = None,
                      frozen: dict[str, object] | None = None) -> DomainSnapshot:
    """Build the snapshot the ODD monitors consume. ``mask`` drops keys
    (sensor outage); ``frozen`` pins keys to stale values (stuck sensor)."""
    s, _ = world.lane.project(state.x, state.y)
    values: dict[str, object] = dict(world.weather_at(now_ms))
    values["scenery.road_type"] = world.road_type
    values["scenery.construction"] = world.construction_ahead(s)
    values["dyn.speed_limit_kmh"] = world.speed_limit_kmh
    values["conn.latency_ms"] = stats.mean_latency_ms
    values["conn.loss_frac"] = stats.loss_frac
    values["conn.heartbeat_age_ms"] = stats.heartbeat_age_ms
    if frozen:
        values.update(frozen)
    if mask:
        for key in mask:
            values.pop(key, None)
    return DomainSnapshot(tick=now_ms, values=values)


# -- collisions ---------------------------------------------------------------

@dataclass(frozen=True)
class CollisionReport:
    kind: str                    # none | static | rear_end
    obstacle_id: str = ""
    impact_speed_mps: float = 0.0

    @property
    def collided(self) -> bool:
        return self.kind != "none"


def check_collision(world: World, state: VehicleState,
                    follower: FollowerState | None) -> CollisionReport:
    """Static check: ego footprint vs every obstacle. Rear-end check: the
    follower's front bumper reaching the ego rear bumper along the lane."""
    ego = _rect_corners(state.x, state.y, world.vehicle_length,
                        world.vehicle_width, state.heading)
    for obstacle in world.obstacles:
        if rects_overlap(ego, obstacle.corners()):
            return CollisionReport("static", obstacle_id=obstacle.obstacle_id,
                                   impact_speed_mps=state.speed)
    if follower is not None:
        ego_s, _ = world.lane.project(state.x, state.y)
        ego_rear = ego_s - world.vehicle_length / 2.0
        if follower.s >= ego_rear:
            return CollisionReport(
                "rear_end",
                obstacle_id="follower",
                impact_speed_mps=max(0.0, follower.speed - state.speed))
    return CollisionReport("none")


def closed_form_rear_end(gap_m: float, speed_mps: float, reaction_s: float,
                         follower_decel: float, lead_decel: float) -> bool:
    """Exact collision predicate for equal initial speeds: the follower
    cruises for its reaction time then brakes; the lead brakes immediately.
    The stopping-distance comparison is exact except when the follower
    brakes harder than the lead and their speeds cross while both are still
    moving, where the minimum gap occurs mid-maneuver."""
    v = speed_mps
    final_shortfall = (v * reaction_s + v * v / (2 * follower_decel)) \
        - (gap_m + v * v / (2 * lead_decel))
    if final_shortfall > 0:
        return True
    if follower_decel > lead_decel:
        t_star = follower_decel * reaction_s / (follower_decel - lead_decel)
        if t_star < v / lead_decel:  # speeds cross while both moving
            lead_run = v * t_star - lead_decel * t_star ** 2 / 2
            foll_run = v * reaction_s + v * (t_star - reaction_s) \
                - follower_decel * (t_star - reaction_s) ** 2 / 2
            return foll_run - lead_run >= gap_m
    return False
