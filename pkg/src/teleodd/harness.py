"""Deterministic fixed-step simulation loop.

Each tick: operator and vehicle feed the channel, the channel delivers,
monitors judge the sensed snapshot against the declared domains, the
maneuver subsystem re-assesses capability, the mode machine steps, exactly
one control source (matching the mode) feeds the plant, and one JSON
record is appended to the log. Replaying the same scenario and seed
reproduces the log byte for byte.

Operator authority is mediated exclusively by the channel: control and
handover packets travel the uplink and take effect only on delivery, so a
severed link silently starves the vehicle of operator input.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .link import (
    DOWN,
    UP,
    Channel,
    LinkStats,
    Packet,
    QualityClass,
    QualityThresholds,
    classify_quality,
)
from .modes import (
    EventKind,
    Mode,
    ModeEvent,
    Policy,
    PolicyConfig,
    VerdictPair,
    classify_risk,
    step_mode,
)
from .mrm import (
    MrmPlanningError,
    assess_capability,
    execute_mrm_step,
    plan_mrm,
)
from .odd import (
    ContainmentVerdict,
    OddDefinition,
    OddEvaluationError,
    apply_hysteresis,
    contains,
    distance_to_border,
)
from .scenario import Scenario
from .world import (
    BRAKE_MAX_MPS2,
    ControlInput,
    VehicleState,
    check_collision,
    clamp_control,
    sense_environment,
    step_follower,
    step_vehicle,
)

TELEMETRY_PERIOD_TICKS = 5    # 20 Hz at dt=10 ms
OPERATOR_SEND_PERIOD_TICKS = 2
ADS_ACCEL_GAIN = 0.8
ADS_ACCEL_MAX = 2.0
ADS_BRAKE_MAX = 3.0
LATERAL_GAIN = 1.2
TRIGGER_MIN_SPEED_MPS = 0.5

INSIDE = ContainmentVerdict(inside=True)


def lane_follow_control(lane, state, target_speed: float) -> ControlInput:
    """Shared scripted driver: hold the centerline, hold a cruise speed."""
    s, d = lane.project(state.x, state.y)
    _, _, lane_heading = lane.point_at(s)
    heading_err = _wrap(lane_heading - state.heading)
    steering = heading_err + math.atan2(-LATERAL_GAIN * d, max(state.speed, 2.0))
    accel = ADS_ACCEL_GAIN * (target_speed - state.speed)
    accel = max(-ADS_BRAKE_MAX, min(ADS_ACCEL_MAX, accel))
    return ControlInput(steering_rad=steering, accel_mps2=accel)


def _wrap(a: float) -> float:
    while a > math.pi:
        a -= 2 * math.pi
    while a < -math.pi:
        a += 2 * math.pi
    return a


def _strip_link_awareness(odd: OddDefinition) -> OddDefinition:
    """The naive policy's worldview: the teleoperation domain says nothing
    about the channel, so connection attributes are simply not judged."""
    kept = {k: v for k, v in odd.attributes.items() if not k.startswith("conn.")}
    bands = {k: v for k, v in odd.hysteresis.items() if k in kept}
    return OddDefinition(name=odd.name, attributes=kept, hysteresis=bands)


@dataclass
class Metrics:
    undefined_entries: int = 0
    mrm_started: int = 0
    mrm_completed: int = 0
    collisions: dict[str, int] = field(default_factory=dict)
    min_margin: dict[str, float] = field(default_factory=dict)
    stop_point_in_zone: bool | None = None
    final_speed_mps: float = 0.0
    final_mode: str = Mode.ADS_IN_ODD.value
    ticks: int = 0
    failed: bool = False
    cause: str = ""

    def to_dict(self) -> dict:
        return {
            "undefined_entries": self.undefined_entries,
            "mrm_started": self.mrm_started,
            "mrm_completed": self.mrm_completed,
            "collisions": dict(sorted(self.collisions.items())),
            "min_margin": dict(sorted(self.min_margin.items())),
            "stop_point_in_zone": self.stop_point_in_zone,
            "final_speed_mps": self.final_speed_mps,
            "final_mode": self.final_mode,
            "ticks": self.ticks,
            "failed": self.failed,
            "cause": self.cause,
        }


def metrics_from_records(records: list[dict],
                         zone: tuple[float, float] | None = None) -> Metrics:
    """Recompute every metric from the per-tick records alone (plus the
    construction interval, which is scenario data, for the stop-point
    judgment)."""
    m = Metrics()
    prev_mode = Mode.ADS_IN_ODD.value
    for rec in records:
        mode = rec["mode"]
        if mode == Mode.UNDEFINED.value and prev_mode != mode:
            m.undefined_entries += 1
        prev_mode = mode
        m.mrm_started += rec["actions"].count("start_mrm")
        if EventKind.MRM_COMPLETE.value in rec["events"]:
            m.mrm_completed += 1
        if rec["col"] is not None:
            kind = rec["col"][0]
            m.collisions[kind] = m.collisions.get(kind, 0) + 1
        for side in ("ads", "tel"):
            for key, value in rec[side]["m"].items():
                if key not in m.min_margin or value < m.min_margin[key]:
                    m.min_margin[key] = value
        if "fault" in rec["notes"]:
            m.failed = True
            m.cause = "mrm execution fault"
    m.ticks = len(records)
    if records:
        last = records[-1]
        m.final_speed_mps = last["v"]
        m.final_mode = last["mode"]
        if zone is not None:
            m.stop_point_in_zone = zone[0] <= last["s"] <= zone[1]
    return m


@dataclass
class RunResult:
    scenario_name: str
    records: list[dict]
    metrics: Metrics
    zone: tuple[float, float] | None

    def lines(self) -> list[str]:
        out = [json.dumps(rec, separators=(",", ":")) for rec in self.records]
        summary = {"summary": {"name": self.scenario_name,
                               "zone": list(self.zone) if self.zone else None,
                               "metrics": self.metrics.to_dict()}}
        out.append(json.dumps(summary, separators=(",", ":")))
        return out

    def write_log(self, path: Path | str):
        Path(path).write_text("\n".join(self.lines()) + "\n")


class OperatorSource:
    """Inbound operator messages for one tick of a served session."""

    def poll(self, tick: int) -> list[tuple[str, object]]:
        raise NotImplementedError

    def publish(self, telemetry: dict):
        pass

    def notify(self, kind: str, tick: int):
        pass


class Harness:
    def __init__(self, scenario: Scenario,
                 operator_source: OperatorSource | None = None,
                 mrm_strategy: str = "corridor"):
        if scenario.world is None:
            raise ValueError("scenario has no world")
        if mrm_strategy not in ("corridor", "straight_line"):
            raise ValueError(f"unknown mrm strategy {mrm_strategy!r}")
        self.sc = scenario
        self.mrm_strategy = mrm_strategy
        self.world = scenario.world
        self.dt_ms = scenario.dt_ms
        self.dt_s = scenario.dt_ms / 1000.0
        self.policy = scenario.policy()
        if (self.policy.kind is Policy.ODD_T1
                and self.policy.odd_teleop is not None):
            self.policy = PolicyConfig(
                kind=self.policy.kind,
                odd_ads=self.policy.odd_ads,
                odd_teleop=_strip_link_awareness(self.policy.odd_teleop),
                teleop_counts_as_degradation=self.policy.teleop_counts_as_degradation)
        self.channel = Channel(scenario.link, scenario.dt_ms,
                               scenario.link_events)
        self.thresholds = QualityThresholds()
        self.operator_source = operator_source

        self.mode = Mode.ADS_IN_ODD
        if scenario.vehicle is not None:
            self.state = scenario.vehicle
        else:
            x, y, heading = self.world.lane.point_at(0.0)
            self.state = VehicleState(x=x, y=y, heading=heading, speed=0.0)
        self.follower = (self.world.make_follower(self.state)
                         if self.world.follower_params else None)
        self.plan = None
        self.mrm_done_announced = False
        self.held_op = ControlInput(0.0, 0.0)     # what the vehicle holds
        self.op_command = ControlInput(0.0, 0.0)  # what the operator wants
        self.op_has_command = False
        self.prev_disc = False
        self.ads_verdict = INSIDE
        self.teleop_verdict = INSIDE
        self.truth_ads_in = True
        self.truth_teleop_in = True
        self.frozen_values: dict[str, object] = {}
        self.seen_collisions: set[tuple[str, str]] = set()
        self.pending_events: list[ModeEvent] = []
        self.pending_offer: tuple[str, int] | None = None  # target, sent tick
        self.failed = False
        self.cause = ""
        self._hb_ticks = max(1, scenario.link.heartbeat_period_ms // self.dt_ms)
        self._op_rows = list(scenario.operator_rows)
        self._op_row_idx = 0
        self._stats = LinkStats(scenario.link.base_latency_ms, 0.0, 0.0)
        self._notes: list[str] = []
        self.records: list[dict] = []
        self.last_cap = assess_capability(self.state, self.world.lane,
                                          self.world.obstacles, scenario.mrm)
        self._scene = {
            "lane": [[x, y] for x, y in self.world.lane.points],
            "lane_width": self.world.lane.width,
            "obstacles": [{"id": o.obstacle_id, "cx": o.cx, "cy": o.cy,
                           "length": o.length, "width": o.width,
                           "heading": o.heading}
                          for o in self.world.obstacles],
            "zone": (list(self.world.construction)
                     if self.world.construction else None),
            "ego": {"length": self.world.vehicle_length,
                    "width": self.world.vehicle_width},
        }

    # -- per-tick phases -----------------------------------------------------

    def _drain_operator(self, now: int, t_ms: int):
        """Collect this tick's operator intent and put it on the uplink."""
        send_handover: list[str] = []
        if self.operator_source is not None:
            for kind, payload in self.operator_source.poll(now):
                if kind == "control":
                    self.op_command = payload
                    self.op_has_command = True
                elif kind == "handover_ack":
                    if self.pending_offer is not None and payload:
                        send_handover.append(self.pending_offer[0])
                    if self.pending_offer is not None and not payload:
                        self.note("handover_declined")
                        self._refuse(self.pending_offer[0])
                    self.pending_offer = None
        else:
            while (self._op_row_idx < len(self._op_rows)
                   and self._op_rows[self._op_row_idx].at_ms <= t_ms):
                row = self._op_rows[self._op_row_idx]
                self._op_row_idx += 1
                if row.kind == "control":
                    self.op_command = ControlInput(row.steering_rad,
                                                   row.accel_mps2)
                    self.op_has_command = True
                else:
                    send_handover.append(row.target)

        if self.pending_offer is not None:
            target, sent = self.pending_offer
            if (now - sent) * self.dt_ms >= self.sc.handover_timeout_ms:
                self.note("handover_timeout")
                self._refuse(target)
                self.pending_offer = None

        for target in send_handover:
            self.channel.send(Packet("handover", target, now), now, UP)
        if now % self._hb_ticks == 0:
            self.channel.send(Packet("heartbeat", None, now), now, UP)
            self.channel.send(Packet("heartbeat", None, now), now, DOWN)
        if now % OPERATOR_SEND_PERIOD_TICKS == 0 and self.mode in (
                Mode.TELEOP_IN_ODD, Mode.TELEOP_OUT_OF_ODD):
            if self.op_has_command:
                cmd = self.op_command
            elif self.operator_source is None:
                # scripted runs drive competently between script rows; a
                # live session sends only what the operator actually sent
                cmd = lane_follow_control(self.world.lane, self.state,
                                          self.world.ads_cruise_mps)
            else:
                cmd = None
            if cmd is not None:
                self.channel.send(Packet("control", cmd, now), now, UP)
        if now % TELEMETRY_PERIOD_TICKS == 0:
            payload = self._telemetry_payload(now)
            self.channel.send(Packet("telemetry", payload, now), now, DOWN)

    def _refuse(self, target: str):
        """A declined or unanswered teleop offer means no remote operator
        is available; the mode machine treats that as a subsystem failure
        and retreats."""
        if target == "teleop":
            self.pending_events.append(ModeEvent(EventKind.SUBSYSTEM_ERROR))

    def _telemetry_payload(self, now: int) -> dict:
        scene = dict(self._scene)
        scene["follower"] = ([round(self.follower.s, 6),
                              round(self.follower.speed, 6)]
                             if self.follower is not None else None)
        return {
            "type": "telemetry",
            "tick": now,
            "pose": {"x": round(self.state.x, 6),
                     "y": round(self.state.y, 6),
                     "heading": round(self.state.heading, 6)},
            "speed_mps": round(self.state.speed, 6),
            "mode": self.mode.value,
            "risk_class": classify_risk(
                self.mode, self.policy.teleop_counts_as_degradation).value,
            "odd": {"ads": {"inside": bool(self.ads_verdict.inside),
                            "margins": {k: round(v, 6) for k, v in
                                        sorted(self.ads_verdict.margin.items())}},
                    "teleop": {"inside": bool(self.teleop_verdict.inside),
                               "margins": {k: round(v, 6) for k, v in
                                           sorted(self.teleop_verdict.margin.items())}}},
            "link": {"latency_ms": round(self._stats.mean_latency_ms, 3),
                     "loss_frac": round(self._stats.loss_frac, 6),
                     "connected": not self.prev_disc},
            "mrm": {"capable": bool(self.last_cap.capable),
                    "margin_m": round(self.last_cap.margin, 6)},
            "scene": scene,
        }

    def _active_windows(self, t_ms: int):
        mask = {w.key for w in self.sc.masks if w.start_ms <= t_ms < w.end_ms}
        frozen = {}
        for w in self.sc.freezes:
            if w.start_ms <= t_ms < w.end_ms:
                if w.key not in self.frozen_values:
                    truth = sense_environment(self.world, self.state,
                                              self._stats, t_ms)
                    self.frozen_values[w.key] = truth.values.get(w.key)
                frozen[w.key] = self.frozen_values[w.key]
            elif w.key in self.frozen_values and t_ms >= w.end_ms:
                del self.frozen_values[w.key]
        return (frozenset(mask) if mask else None), (frozen or None)

    def _judge(self, odd: OddDefinition | None, snap, truth_snap,
               prev: ContainmentVerdict) -> tuple[ContainmentVerdict, bool]:
        """Monitor verdict with hysteresis plus the ground-truth verdict.
        A key the sensors cannot currently report keeps its previous
        perceived state; truth still moves underneath."""
        if odd is None:
            return INSIDE, True
        truth_in = contains(odd, truth_snap).inside
        try:
            raw = contains(odd, snap)
            margins = distance_to_border(odd, snap)
        except OddEvaluationError:
            return prev, truth_in
        verdict = apply_hysteresis(prev, raw, margins, odd.bands())
        return verdict, truth_in

    def note(self, text: str):
        self._notes.append(text)

    def _tick(self, now: int):
        t_ms = now * self.dt_ms
        self._notes: list[str] = []
        events: list[ModeEvent] = list(self.pending_events)
        self.pending_events = []

        # operator and vehicle feed the channel, then it delivers
        self._drain_operator(now, t_ms)
        delivered_up = self.channel.step(now, UP)
        delivered_down = self.channel.step(now, DOWN)
        op_rx = 0
        handover_targets: list[str] = []
        for pkt in delivered_up:
            if pkt.kind == "control":
                self.held_op = pkt.payload
                op_rx += 1
            elif pkt.kind == "handover":
                handover_targets.append(pkt.payload)
        if self.operator_source is not None:
            for pkt in delivered_down:
                if pkt.kind == "telemetry":
                    self.operator_source.publish(pkt.payload)

        self._stats = stats = self.channel.stats(now, UP)
        quality = classify_quality(stats, self.thresholds)

        # monitors judge the snapshot the sensors actually produced
        mask, frozen = self._active_windows(t_ms)
        truth_snap = sense_environment(self.world, self.state, stats, t_ms)
        snap = (truth_snap if mask is None and frozen is None else
                sense_environment(self.world, self.state, stats, t_ms,
                                  mask=mask, frozen=frozen))
        prev_ads, prev_teleop = self.ads_verdict, self.teleop_verdict
        self.ads_verdict, truth_ads = self._judge(
            self.policy.odd_ads, snap, truth_snap, prev_ads)
        self.teleop_verdict, truth_teleop = self._judge(
            self.policy.odd_teleop, snap, truth_snap, prev_teleop)

        # noticed border crossings are verdict flips; unnoticed ones are
        # divergences between truth and belief, reported once at onset
        if prev_ads.inside and not self.ads_verdict.inside:
            events.append(ModeEvent(EventKind.BORDER_REACHED_ADS))
        if prev_teleop.inside and not self.teleop_verdict.inside:
            events.append(ModeEvent(EventKind.BORDER_REACHED_TELEOP))
        if self.truth_ads_in and not truth_ads and self.ads_verdict.inside:
            events.append(ModeEvent(EventKind.BORDER_REACHED_ADS,
                                    perceived=False))
        if (self.truth_teleop_in and not truth_teleop
                and self.teleop_verdict.inside):
            events.append(ModeEvent(EventKind.BORDER_REACHED_TELEOP,
                                    perceived=False))
        self.truth_ads_in, self.truth_teleop_in = truth_ads, truth_teleop

        cap = assess_capability(self.state, self.world.lane,
                                self.world.obstacles, self.sc.mrm)
        self.last_cap = cap
        if (self.policy.kind is Policy.ODD_T2
                and self.mode is Mode.TELEOP_IN_ODD
                and cap.capable and cap.margin < self.sc.mrm.trigger_margin_m
                and self.state.speed > TRIGGER_MIN_SPEED_MPS):
            events.append(ModeEvent(EventKind.BORDER_REACHED_TELEOP))
            self.note("capability_trigger")

        disc = self.channel.detect_disconnect(now, UP)
        if disc and not self.prev_disc:
            events.append(ModeEvent(EventKind.DISCONNECT))
        elif self.prev_disc and not disc:
            events.append(ModeEvent(EventKind.RECONNECT))
        self.prev_disc = disc

        for target in handover_targets:
            if target == "teleop":
                if quality is QualityClass.UNUSABLE:
                    self.note("handover_denied:quality")
                    continue
                events.append(ModeEvent(EventKind.HANDOVER_REQUEST_TO_TELEOP))
            else:
                events.append(ModeEvent(EventKind.HANDOVER_REQUEST_TO_ADS))

        decision = step_mode(self.mode, events,
                             VerdictPair(self.ads_verdict, self.teleop_verdict),
                             cap, self.policy)
        actions = [a.label() for a in decision.actions]
        next_mode = decision.next_mode
        if any(a.startswith("start_mrm") for a in actions):
            try:
                self.plan = plan_mrm(self.state, cap, self.sc.mrm)
                self.mrm_done_announced = False
            except MrmPlanningError as exc:
                self.note(f"mrm_plan_failed:{exc}")
                next_mode = Mode.UNDEFINED
                actions.append("flag_unreasonable_risk")
        entered_undefined = (next_mode is Mode.UNDEFINED
                             and self.mode is not Mode.UNDEFINED)
        self.mode = next_mode

        # exactly one control source, matching the mode, feeds the plant
        src, control = self._control(now)
        control = clamp_control(control)
        prev_speed = self.state.speed
        self.state = step_vehicle(self.state, control, self.dt_s)
        if self.follower is not None:
            self.follower = step_follower(
                self.follower, self.state.speed, prev_speed,
                now * self.dt_s, self.dt_s, self.world.follower_params)

        if (self.mode is Mode.MRM_ACTIVE and self.plan is not None
                and self.plan.done(self.state) and not self.mrm_done_announced):
            self.pending_events.append(ModeEvent(EventKind.MRM_COMPLETE))
            self.mrm_done_announced = True

        col = check_collision(self.world, self.state, self.follower)
        col_entry = None
        if col.collided:
            key = (col.kind, col.obstacle_id or "")
            if key not in self.seen_collisions:
                self.seen_collisions.add(key)
                col_entry = [col.kind, col.obstacle_id,
                             round(col.impact_speed_mps, 6)]

        s, _ = self.world.lane.project(self.state.x, self.state.y)
        rec = {
            "tick": now,
            "mode": self.mode.value,
            "risk": classify_risk(
                self.mode, self.policy.teleop_counts_as_degradation).value,
            "src": src,
            "x": round(self.state.x, 9),
            "y": round(self.state.y, 9),
            "hdg": round(self.state.heading, 9),
            "v": round(self.state.speed, 9),
            "s": round(s, 9),
            "ads": {"in": int(self.ads_verdict.inside),
                    "m": {k: round(v, 9)
                          for k, v in sorted(self.ads_verdict.margin.items())}},
            "tel": {"in": int(self.teleop_verdict.inside),
                    "m": {k: round(v, 9)
                          for k, v in sorted(self.teleop_verdict.margin.items())}},
            "cap": [int(cap.capable), round(cap.margin, 9)],
            "link": [round(stats.mean_latency_ms, 9),
                     round(stats.loss_frac, 9),
                     round(stats.heartbeat_age_ms, 9)],
            "q": quality.value,
            "disc": int(disc),
            "events": [self._event_label(e) for e in events],
            "actions": actions,
            "notes": self._notes,
            "op_rx": op_rx,
            "fol": ([round(self.follower.s, 9), round(self.follower.speed, 9)]
                    if self.follower is not None else None),
            "col": col_entry,
        }
        self.records.append(rec)
        if self.operator_source is not None:
            if entered_undefined:
                self.operator_source.notify("undefined_entered", now)
            if "start_mrm" in actions:
                self.operator_source.notify("mrm_started", now)
            if EventKind.MRM_COMPLETE.value in rec["events"]:
                self.operator_source.notify("mrc_reached", now)
            if ModeEvent(EventKind.DISCONNECT) in events:
                self.operator_source.notify("disconnect_detected", now)

    @staticmethod
    def _event_label(ev: ModeEvent) -> str:
        return ev.kind.value if ev.perceived else ev.kind.value + ":unperceived"

    def _control(self, now: int) -> tuple[str, ControlInput]:
        mode = self.mode
        if mode in (Mode.ADS_IN_ODD, Mode.ADS_OUT_OF_ODD):
            return "ads", lane_follow_control(self.world.lane, self.state,
                                              self.world.ads_cruise_mps)
        if mode in (Mode.TELEOP_IN_ODD, Mode.TELEOP_OUT_OF_ODD):
            return "operator", self.held_op
        if mode is Mode.MRM_ACTIVE and self.plan is not None:
            if self.plan.off_corridor(self.state) and not self.failed:
                self.failed = True
                self.cause = "mrm execution fault"
                self.note("fault")
            if self.mrm_strategy == "straight_line":
                if self.state.speed > 0:
                    return "mrm", ControlInput(0.0, -BRAKE_MAX_MPS2)
                return "mrm", ControlInput(0.0, 0.0)
            return "mrm", execute_mrm_step(self.plan, self.state,
                                           self.sc.mrm.a_max)
        if mode is Mode.UNDEFINED and self.state.speed > 0:
            return "none", ControlInput(0.0, -BRAKE_MAX_MPS2)
        return "none", ControlInput(0.0, 0.0)

    def offer_handover(self, target: str, now: int):
        """Serve mode: put a handover offer in front of the operator."""
        if self.operator_source is not None and self.pending_offer is None:
            self.pending_offer = (target, now)
            self.operator_source.notify(f"handover_offer:{target}", now)

    # -- whole runs ----------------------------------------------------------

    def finish(self) -> RunResult:
        metrics = metrics_from_records(self.records, self.world.construction)
        metrics.failed = self.failed
        metrics.cause = self.cause
        return RunResult(scenario_name=self.sc.name, records=self.records,
                         metrics=metrics, zone=self.world.construction)

    def run(self) -> RunResult:
        for now in range(self.sc.ticks):
            self._tick(now)
        return self.finish()


def run_scenario(scenario: Scenario, policy: Policy | None = None,
                 seed: int | None = None,
                 operator_source: OperatorSource | None = None,
                 mrm_strategy: str = "corridor") -> RunResult:
    resolved = scenario.resolved(seed_override=seed, policy_override=policy)
    return Harness(resolved, operator_source, mrm_strategy).run()


def replay(log_path: Path | str, scenario: Scenario,
           policy: Policy | None = None, seed: int | None = None,
           mrm_strategy: str = "corridor") -> tuple[bool, int | None]:
    """Re-execute and compare line by line; returns (identical, first
    divergent line index)."""
    old = Path(log_path).read_text().splitlines()
    new = run_scenario(scenario, policy=policy, seed=seed,
                       mrm_strategy=mrm_strategy).lines()
    for i, (a, b) in enumerate(zip(old, new)):
        if a != b:
            return False, i
    if len(old) != len(new):
        return False, min(len(old), len(new))
    return True, None
