"""Scenario files: sectioned plain text describing one reproducible run.

A scenario bundles the world, the named operational design domains, the
policy wiring, the communication channel with its scripted faults, and an
optional operator script. Sections are ``[world]``, ``[odd <name>]``,
``[policy]``, ``[link]`` and ``[operator]``; keys before the first section
header configure the run itself. ``#`` starts a comment anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .link import ChannelConfig, LinkEvent
from .modes import Policy, PolicyConfig
from .mrm import MrmParams
from .odd import OddDefinition, OddSyntaxError, parse_odd_definition
from .world import FollowerParams, Lane, Obstacle, VehicleState, WeatherRow, World

DEFAULT_DT_MS = 10
DEFAULT_HANDOVER_TIMEOUT_MS = 2000

# snapshot keys the harness synthesizes regardless of the weather timeline
SYNTHETIC_KEY_PREFIXES = ("conn.", "scenery.", "dyn.")


class ScenarioError(ValueError):
    """Aggregated load failure; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class OperatorRow:
    """One timed operator input: a held control change or a handover."""

    at_ms: int
    kind: str                  # "control" | "handover"
    steering_rad: float = 0.0
    accel_mps2: float = 0.0
    target: str = ""           # handover target: "ads" | "teleop"


@dataclass(frozen=True)
class SensorWindow:
    start_ms: int
    end_ms: int
    key: str


@dataclass
class Scenario:
    name: str
    duration_ms: int
    dt_ms: int = DEFAULT_DT_MS
    seed: int = 0
    mrm: MrmParams = field(default_factory=MrmParams)
    world: World | None = None
    vehicle: VehicleState | None = None
    odds: dict[str, OddDefinition] = field(default_factory=dict)
    policy_kind: Policy = Policy.ODD_T2
    odd_ads_name: str = ""
    odd_teleop_name: str = ""
    teleop_degraded: bool = True
    handover_timeout_ms: int = DEFAULT_HANDOVER_TIMEOUT_MS
    link: ChannelConfig = field(default_factory=ChannelConfig)
    link_seed_explicit: bool = False
    link_events: list[LinkEvent] = field(default_factory=list)
    operator_rows: list[OperatorRow] = field(default_factory=list)
    masks: list[SensorWindow] = field(default_factory=list)
    freezes: list[SensorWindow] = field(default_factory=list)

    @property
    def ticks(self) -> int:
        return self.duration_ms // self.dt_ms

    def policy(self) -> PolicyConfig:
        return PolicyConfig(
            kind=self.policy_kind,
            odd_ads=self.odds.get(self.odd_ads_name),
            odd_teleop=self.odds.get(self.odd_teleop_name),
            teleop_counts_as_degradation=self.teleop_degraded)

    def resolved(self, seed_override: int | None = None,
                 policy_override: Policy | str | None = None) -> "Scenario":
        """Apply command-line overrides. A new master seed re-derives the
        link seed so every random stream moves together."""
        out = Scenario(**{**self.__dict__})
        if seed_override is not None:
            out.seed = seed_override
            out.link = ChannelConfig(**{**self.link.__dict__,
                                        "seed": seed_override * 2 + 1})
        if policy_override is not None:
            out.policy_kind = Policy(policy_override)
        return out


def _strip(line: str) -> str:
    if "#" in line:
        line = line[:line.index("#")]
    return line.strip()


def _parse_bool(token: str) -> bool:
    if token in ("true", "false"):
        return token == "true"
    raise ValueError(f"expected true or false, got {token!r}")


class _Parser:
    def __init__(self, text: str, base_dir: Path, name_hint: str):
        self.lines = text.splitlines()
        self.base_dir = base_dir
        self.problems: list[str] = []
        self.header: dict[str, str] = {}
        self.name = name_hint
        self.duration_ms = 0
        self.dt_ms = DEFAULT_DT_MS
        self.seed = 0
        self.mrm_kwargs: dict[str, float] = {}
        # world accumulation
        self.lane_points: list[tuple[float, float]] | None = None
        self.world_kwargs: dict = {}
        self.obstacles: list[Obstacle] = []
        self.weather: list[WeatherRow] = []
        self.follower: FollowerParams | None = None
        self.construction: tuple[float, float] | None = None
        self.vehicle_row: tuple[float, float, float, float] | None = None
        self.masks: list[SensorWindow] = []
        self.freezes: list[SensorWindow] = []
        self.has_world = False
        # other sections
        self.odds: dict[str, OddDefinition] = {}
        self.policy_rows: dict[str, str] = {}
        self.link_kwargs: dict = {}
        self.link_seed_explicit = False
        self.link_events: list[LinkEvent] = []
        self.operator_rows: list[OperatorRow] = []

    def fail(self, lineno: int, message: str):
        self.problems.append(f"line {lineno}: {message}")

    def parse(self) -> Scenario:
        section = None          # None | "world" | "policy" | "link" | "operator"
        odd_name = ""
        odd_lines: list[tuple[int, str]] = []

        def flush_odd():
            nonlocal odd_lines
            if section == "odd":
                self.finish_odd(odd_name, odd_lines)
            odd_lines = []

        for lineno, raw in enumerate(self.lines, start=1):
            line = _strip(raw)
            if not line:
                continue
            if line.startswith("["):
                if not line.endswith("]"):
                    self.fail(lineno, f"malformed section header {line!r}")
                    continue
                flush_odd()
                inner = line[1:-1].strip()
                if inner.startswith("odd"):
                    section = "odd"
                    odd_name = inner[3:].strip()
                    if not odd_name:
                        self.fail(lineno, "odd section needs a name: [odd <name>]")
                elif inner in ("world", "policy", "link", "operator"):
                    section = inner
                else:
                    self.fail(lineno, f"unknown section [{inner}]")
                    section = "skip"
                continue
            try:
                if section is None:
                    self.header_line(line, lineno)
                elif section == "world":
                    self.world_line(line, lineno)
                elif section == "odd":
                    odd_lines.append((lineno, line))
                elif section == "policy":
                    key, _, value = line.partition(" ")
                    self.policy_rows[key] = value.strip()
                elif section == "link":
                    self.link_line(line, lineno)
                elif section == "operator":
                    self.operator_line(line, lineno)
            except ValueError as exc:
                self.fail(lineno, str(exc))
        flush_odd()
        return self.build()

    # -- section line handlers ---------------------------------------------

    def header_line(self, line: str, lineno: int):
        key, _, value = line.partition(" ")
        value = value.strip()
        if not value:
            raise ValueError(f"key {key!r} needs a value")
        if key == "name":
            self.name = value
        elif key == "duration_ms":
            self.duration_ms = int(value)
        elif key == "dt_ms":
            self.dt_ms = int(value)
        elif key == "seed":
            self.seed = int(value)
        elif key.startswith("mrm."):
            self.mrm_kwargs[key[4:]] = float(value)
        else:
            raise ValueError(f"unknown header key {key!r}")

    def world_line(self, line: str, lineno: int):
        self.has_world = True
        key, _, value = line.partition(" ")
        value = value.strip()
        if key == "lane":
            points = []
            for pair in value.split(","):
                xy = pair.split()
                if len(xy) != 2:
                    raise ValueError(f"lane point {pair.strip()!r} is not 'x y'")
                points.append((float(xy[0]), float(xy[1])))
            if len(points) < 2:
                raise ValueError("lane needs at least two points")
            self.lane_points = points
        elif key == "lane_width":
            self.world_kwargs["lane_width"] = float(value)
        elif key in ("speed_limit_kmh", "ads_cruise_mps", "vehicle_length",
                     "vehicle_width", "construction_lookahead_m"):
            self.world_kwargs[key] = float(value)
        elif key == "road_type":
            self.world_kwargs["road_type"] = value
        elif key == "vehicle":
            parts = [float(p) for p in value.split()]
            if len(parts) != 4:
                raise ValueError("vehicle needs: x y heading speed")
            self.vehicle_row = tuple(parts)
        elif key == "obstacle":
            parts = value.split()
            if len(parts) not in (5, 6):
                raise ValueError("obstacle needs: id cx cy length width [heading]")
            heading = float(parts[5]) if len(parts) == 6 else 0.0
            self.obstacles.append(Obstacle(parts[0], float(parts[1]),
                                           float(parts[2]), float(parts[3]),
                                           float(parts[4]), heading))
        elif key == "construction":
            lo, hi = (float(p) for p in value.split())
            self.construction = (lo, hi)
        elif key == "weather":
            at, wkey, wval = value.split()
            self.weather.append(WeatherRow(int(at), wkey, float(wval)))
        elif key == "follower":
            gap, speed, reaction, decel = (float(p) for p in value.split())
            self.follower = FollowerParams(gap, speed, reaction, decel)
        elif key in ("mask", "freeze"):
            start, end, skey = value.split()
            window = SensorWindow(int(start), int(end), skey)
            (self.masks if key == "mask" else self.freezes).append(window)
        else:
            raise ValueError(f"unknown world key {key!r}")

    def finish_odd(self, name: str, rows: list[tuple[int, str]]):
        if not name:
            return
        if len(rows) == 1 and rows[0][1].startswith("file "):
            lineno, line = rows[0]
            rel = line[5:].strip()
            path = self.base_dir / rel
            if not path.is_file():
                self.fail(lineno, f"odd {name!r}: file {rel!r} not found")
                return
            try:
                self.odds[name] = parse_odd_definition(path.read_text())
            except OddSyntaxError as exc:
                self.fail(lineno, f"odd {name!r}: {rel}: {exc}")
            return
        first = rows[0][0] if rows else 0
        body = "\n".join(line for _, line in rows)
        if not body.startswith("name "):
            body = f"name {name}\n" + body
        try:
            self.odds[name] = parse_odd_definition(body)
        except OddSyntaxError as exc:
            self.fail(first, f"odd {name!r}: {exc}")

    def link_line(self, line: str, lineno: int):
        key, _, value = line.partition(" ")
        value = value.strip()
        if key == "event":
            at, kind, arg = value.split()
            self.link_events.append(LinkEvent(int(at), kind, float(arg)))
        elif key in ("base_latency_ms", "jitter_ms", "loss_prob"):
            self.link_kwargs[key] = float(value)
        elif key in ("heartbeat_period_ms", "disconnect_timeout_ms", "seed"):
            self.link_kwargs[key] = int(value)
            if key == "seed":
                self.link_seed_explicit = True
        else:
            raise ValueError(f"unknown link key {key!r}")

    def operator_line(self, line: str, lineno: int):
        parts = line.split()
        if len(parts) < 3 or parts[0] != "at":
            raise ValueError("operator rows: 'at <ms> steering|accel|handover ...'")
        at = int(parts[1])
        if parts[2] == "handover":
            if len(parts) != 4 or parts[3] not in ("ads", "teleop"):
                raise ValueError("handover target must be ads or teleop")
            self.operator_rows.append(OperatorRow(at, "handover",
                                                  target=parts[3]))
            return
        steering = accel = None
        i = 2
        while i < len(parts):
            if parts[i] == "steering":
                steering = float(parts[i + 1])
            elif parts[i] == "accel":
                accel = float(parts[i + 1])
            else:
                raise ValueError(f"unknown operator field {parts[i]!r}")
            i += 2
        self.operator_rows.append(OperatorRow(
            at, "control",
            steering_rad=steering if steering is not None else 0.0,
            accel_mps2=accel if accel is not None else 0.0))

    # -- assembly ------------------------------------------------------------

    def build(self) -> Scenario:
        lane = Lane(self.lane_points or [(0.0, 0.0), (1000.0, 0.0)],
                    self.world_kwargs.pop("lane_width", 3.5))
        try:
            world = World(lane=lane, obstacles=self.obstacles,
                          construction=self.construction,
                          weather=self.weather,
                          follower_params=self.follower, **self.world_kwargs)
        except (TypeError, ValueError) as exc:
            self.problems.append(f"world: {exc}")
            world = None

        if self.vehicle_row is not None:
            x, y, heading, speed = self.vehicle_row
            vehicle = VehicleState(x=x, y=y, heading=heading, speed=speed)
        else:
            x, y, heading = lane.point_at(0.0)
            vehicle = VehicleState(x=x, y=y, heading=heading, speed=0.0)

        policy_kind = Policy.ODD_T2
        teleop_degraded = True
        handover_timeout = DEFAULT_HANDOVER_TIMEOUT_MS
        odd_ads_name = odd_teleop_name = ""
        for key, value in self.policy_rows.items():
            try:
                if key == "kind":
                    if value not in ("odd_t1", "odd_t2"):
                        raise ValueError(f"unknown policy kind {value!r}")
                    policy_kind = Policy(value)
                elif key == "odd_ads":
                    odd_ads_name = value
                elif key == "odd_teleop":
                    odd_teleop_name = value
                elif key == "teleop_degraded":
                    teleop_degraded = _parse_bool(value)
                elif key == "handover_timeout_ms":
                    handover_timeout = int(value)
                else:
                    raise ValueError(f"unknown policy key {key!r}")
            except ValueError as exc:
                self.problems.append(f"policy: {exc}")
        for label, ref in (("odd_ads", odd_ads_name),
                           ("odd_teleop", odd_teleop_name)):
            if ref and ref not in self.odds:
                self.problems.append(
                    f"policy: {label} references undefined odd {ref!r}")

        if not self.link_seed_explicit:
            self.link_kwargs["seed"] = self.seed * 2 + 1
        try:
            link = ChannelConfig(**self.link_kwargs)
        except (TypeError, ValueError) as exc:
            self.problems.append(f"link: {exc}")
            link = ChannelConfig()

        if self.duration_ms < 0:
            self.problems.append("duration_ms must be non-negative")
        if self.dt_ms <= 0:
            self.problems.append("dt_ms must be positive")

        try:
            mrm = MrmParams(**self.mrm_kwargs)
        except (TypeError, ValueError) as exc:
            self.problems.append(f"mrm: {exc}")
            mrm = MrmParams()

        scenario = Scenario(
            name=self.name, duration_ms=self.duration_ms, dt_ms=self.dt_ms,
            seed=self.seed, mrm=mrm, world=world, vehicle=vehicle,
            odds=self.odds, policy_kind=policy_kind,
            odd_ads_name=odd_ads_name, odd_teleop_name=odd_teleop_name,
            teleop_degraded=teleop_degraded,
            handover_timeout_ms=handover_timeout, link=link,
            link_seed_explicit=self.link_seed_explicit,
            link_events=sorted(self.link_events, key=lambda e: e.at_ms),
            operator_rows=sorted(self.operator_rows, key=lambda r: r.at_ms),
            masks=self.masks, freezes=self.freezes)

        if world is not None:
            weather_keys = {row.key for row in self.weather}
            for odd in self.odds.values():
                for key in odd.attributes:
                    if key.startswith(SYNTHETIC_KEY_PREFIXES):
                        continue
                    if key not in weather_keys:
                        self.problems.append(
                            f"odd {odd.name!r}: key {key!r} is not produced "
                            f"by the world (no weather timeline for it)")

        if self.problems:
            raise ScenarioError(self.problems)
        return scenario


def parse_scenario(text: str, base_dir: Path | str = ".",
                   name_hint: str = "unnamed") -> Scenario:
    return _Parser(text, Path(base_dir), name_hint).parse()


def load_scenario(path: Path | str) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError([f"scenario file {str(path)!r} not found"])
    return parse_scenario(path.read_text(), path.parent, path.stem)
