"""Mode state machine for the combined ADS / teleoperation / MRM system.

The machine is total: for every mode, event, perception flag, pair of ODD
verdicts and capability bit it returns exactly one decision. Simultaneous
events resolve by a fixed priority (failures before handovers before
border crossings), and verdict changes alone can move the machine even
with no event in the tick, which is how ODD re-entry and capability loss
take effect.

Two permission policies are supported. ``odd_t2`` gates every use of
teleoperation on the dedicated maneuver capability being present, so a
dropped link always has a planned stop to fall back on. ``odd_t1`` grants
teleoperation purely on domain containment; with the link gone outside the
ADS domain there is no defined behavior left, which the machine makes
explicit as the ``UNDEFINED`` mode.
"""

from __future__ import annotations

import io
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .mrm import Corridor, MrmCapability
from .odd import ContainmentVerdict, OddDefinition
from .world import Lane


class Mode(Enum):
    ADS_IN_ODD = "AdsInOdd"
    ADS_OUT_OF_ODD = "AdsOutOfOdd"
    TELEOP_IN_ODD = "TeleopInOdd"
    TELEOP_OUT_OF_ODD = "TeleopOutOfOdd"
    MRM_ACTIVE = "MrmActive"
    MINIMAL_RISK_CONDITION = "MinimalRiskCondition"
    UNDEFINED = "Undefined"


class RiskClass(Enum):
    OPERATIONAL = "operational"
    FAIL_DEGRADED = "fail_degraded"
    FAIL_SAFE = "fail_safe"
    FAIL_UNSAFE = "fail_unsafe"
    UNDEFINED = "undefined"


class EventKind(Enum):
    BORDER_REACHED_ADS = "BorderReachedAds"
    BORDER_REACHED_TELEOP = "BorderReachedTeleop"
    HANDOVER_REQUEST_TO_TELEOP = "HandoverRequestToTeleop"
    HANDOVER_REQUEST_TO_ADS = "HandoverRequestToAds"
    ACTIVE_LEAVE_TELEOP_ODD = "ActiveLeaveTeleopOdd"
    DISCONNECT = "Disconnect"
    RECONNECT = "Reconnect"
    SUBSYSTEM_ERROR = "SubsystemError"
    MRM_COMPLETE = "MrmComplete"


BORDER_EVENTS = (EventKind.BORDER_REACHED_ADS, EventKind.BORDER_REACHED_TELEOP)

# Failures preempt handover requests, which preempt border handling.
_PRIORITY = [
    EventKind.SUBSYSTEM_ERROR,
    EventKind.DISCONNECT,
    EventKind.RECONNECT,
    EventKind.MRM_COMPLETE,
    EventKind.HANDOVER_REQUEST_TO_TELEOP,
    EventKind.HANDOVER_REQUEST_TO_ADS,
    EventKind.ACTIVE_LEAVE_TELEOP_ODD,
    EventKind.BORDER_REACHED_ADS,
    EventKind.BORDER_REACHED_TELEOP,
]


@dataclass(frozen=True)
class ModeEvent:
    """``perceived=False`` models a border crossing the vehicle missed; it
    is meaningful only for the two border kinds and ignored elsewhere."""

    kind: EventKind
    perceived: bool = True


@dataclass(frozen=True)
class Action:
    kind: str            # grant_control | start_mrm | flag_unreasonable_risk | log_hazard
    target: str = ""

    def label(self) -> str:
        return f"{self.kind}:{self.target}" if self.target else self.kind


GRANT_ADS = Action("grant_control", "ads")
GRANT_TELEOP = Action("grant_control", "teleop")
START_MRM = Action("start_mrm")
FLAG_RISK = Action("flag_unreasonable_risk")
LOG_HAZARD = Action("log_hazard")


@dataclass(frozen=True)
class TransitionDecision:
    next_mode: Mode
    actions: tuple[Action, ...] = ()

    def label(self) -> str:
        acts = "|".join(a.label() for a in self.actions) or "none"
        return f"{self.next_mode.value} [{acts}]"


class Policy(Enum):
    ODD_T1 = "odd_t1"
    ODD_T2 = "odd_t2"


@dataclass(frozen=True)
class PolicyConfig:
    kind: Policy = Policy.ODD_T2
    odd_ads: OddDefinition | None = None
    odd_teleop: OddDefinition | None = None
    teleop_counts_as_degradation: bool = True


@dataclass(frozen=True)
class VerdictPair:
    ads: ContainmentVerdict
    teleop: ContainmentVerdict


def classify_risk(mode: Mode, teleop_counts_as_degradation: bool = True) -> RiskClass:
    if mode is Mode.ADS_IN_ODD:
        return RiskClass.OPERATIONAL
    if mode is Mode.TELEOP_IN_ODD:
        return (RiskClass.FAIL_DEGRADED if teleop_counts_as_degradation
                else RiskClass.OPERATIONAL)
    if mode in (Mode.MRM_ACTIVE, Mode.MINIMAL_RISK_CONDITION):
        return RiskClass.FAIL_SAFE
    if mode in (Mode.ADS_OUT_OF_ODD, Mode.TELEOP_OUT_OF_ODD):
        return RiskClass.FAIL_UNSAFE
    return RiskClass.UNDEFINED


def step_mode(mode: Mode, events: list[ModeEvent], verdicts: VerdictPair,
              cap: MrmCapability, policy: PolicyConfig) -> TransitionDecision:
    """Total transition function.

    Events are deduplicated and scanned in priority order; the first one
    that produces a state change or action wins the tick. If none does,
    the verdicts themselves may force a move (border exit while believed
    inside, or re-entry while flagged outside). Otherwise the machine
    holds its mode with no actions.
    """
    a_in = verdicts.ads.inside
    t_in = verdicts.teleop.inside
    capable = cap.capable
    seen = set()
    ordered = []
    for ev in sorted(events, key=lambda e: (_PRIORITY.index(e.kind), not e.perceived)):
        key = (ev.kind, ev.perceived if ev.kind in BORDER_EVENTS else True)
        if key not in seen:
            seen.add(key)
            ordered.append(ev)
    for ev in ordered:
        decision = _decide(mode, ev, a_in, t_in, capable, policy)
        if decision is not None:
            return decision
    decision = _verdict_driven(mode, a_in, t_in, capable, policy)
    if decision is not None:
        return decision
    return TransitionDecision(mode)


def _teleop_permitted(t_in: bool, capable: bool, policy: PolicyConfig) -> bool:
    if policy.kind is Policy.ODD_T2:
        return t_in and capable
    return t_in


def _mrm_backed(a_in: bool, capable: bool, policy: PolicyConfig) -> bool:
    # What backs a minimal risk maneuver: the dedicated subsystem's
    # capability under odd_t2, the ADS being inside its own domain under
    # the naive odd_t1 worldview.
    if policy.kind is Policy.ODD_T2:
        return capable
    return a_in


def _start_mrm(backed: bool) -> tuple[Action, ...]:
    return (START_MRM,) if backed else (START_MRM, LOG_HAZARD)


def _decide(mode: Mode, ev: ModeEvent, a_in: bool, t_in: bool, capable: bool,
            policy: PolicyConfig) -> TransitionDecision | None:
    kind = ev.kind
    teleop_ok = _teleop_permitted(t_in, capable, policy)
    backed = _mrm_backed(a_in, capable, policy)

    if mode in (Mode.MRM_ACTIVE, Mode.MINIMAL_RISK_CONDITION, Mode.UNDEFINED):
        if mode is Mode.MRM_ACTIVE and kind is EventKind.MRM_COMPLETE:
            return TransitionDecision(Mode.MINIMAL_RISK_CONDITION)
        return None

    if kind is EventKind.SUBSYSTEM_ERROR:
        if mode in (Mode.ADS_OUT_OF_ODD, Mode.TELEOP_OUT_OF_ODD):
            return TransitionDecision(Mode.UNDEFINED, (FLAG_RISK,))
        if mode is Mode.TELEOP_IN_ODD and policy.kind is Policy.ODD_T1 and not a_in:
            return TransitionDecision(Mode.UNDEFINED, (FLAG_RISK,))
        return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))

    if kind is EventKind.DISCONNECT:
        if mode in (Mode.ADS_OUT_OF_ODD, Mode.TELEOP_OUT_OF_ODD):
            return TransitionDecision(Mode.UNDEFINED, (FLAG_RISK,))
        if mode is Mode.TELEOP_IN_ODD:
            if policy.kind is Policy.ODD_T1 and not a_in:
                return TransitionDecision(Mode.UNDEFINED, (FLAG_RISK,))
            return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))
        return None  # the ADS does not need the link

    if kind is EventKind.RECONNECT:
        return None

    if kind is EventKind.MRM_COMPLETE:
        return None

    if kind is EventKind.HANDOVER_REQUEST_TO_TELEOP:
        if mode in (Mode.ADS_IN_ODD, Mode.ADS_OUT_OF_ODD) and teleop_ok:
            return TransitionDecision(Mode.TELEOP_IN_ODD, (GRANT_TELEOP,))
        return None

    if kind is EventKind.HANDOVER_REQUEST_TO_ADS:
        if mode in (Mode.TELEOP_IN_ODD, Mode.TELEOP_OUT_OF_ODD) and a_in:
            return TransitionDecision(Mode.ADS_IN_ODD, (GRANT_ADS,))
        return None

    if kind is EventKind.ACTIVE_LEAVE_TELEOP_ODD:
        if mode is Mode.TELEOP_IN_ODD:
            return TransitionDecision(Mode.TELEOP_OUT_OF_ODD, (FLAG_RISK,))
        return None

    if kind is EventKind.BORDER_REACHED_ADS:
        if mode is Mode.ADS_IN_ODD:
            if not ev.perceived:
                return TransitionDecision(Mode.ADS_OUT_OF_ODD, (LOG_HAZARD,))
            if teleop_ok:
                return TransitionDecision(Mode.TELEOP_IN_ODD, (GRANT_TELEOP,))
            return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))
        if mode is Mode.ADS_OUT_OF_ODD and ev.perceived:
            return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))
        return None

    if kind is EventKind.BORDER_REACHED_TELEOP:
        if mode is Mode.TELEOP_IN_ODD:
            if not ev.perceived:
                return TransitionDecision(Mode.TELEOP_OUT_OF_ODD, (LOG_HAZARD,))
            if a_in:
                return TransitionDecision(Mode.ADS_IN_ODD, (GRANT_ADS,))
            return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))
        if mode is Mode.TELEOP_OUT_OF_ODD and ev.perceived:
            return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))
        return None

    return None


def _verdict_driven(mode: Mode, a_in: bool, t_in: bool, capable: bool,
                    policy: PolicyConfig) -> TransitionDecision | None:
    """Moves forced by the monitors alone: leaving a domain one is believed
    to be inside (treated as a perceived border), and re-entering one."""
    teleop_ok = _teleop_permitted(t_in, capable, policy)
    backed = _mrm_backed(a_in, capable, policy)
    if mode is Mode.ADS_IN_ODD and not a_in:
        if teleop_ok:
            return TransitionDecision(Mode.TELEOP_IN_ODD, (GRANT_TELEOP,))
        return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))
    if mode is Mode.TELEOP_IN_ODD and not teleop_ok:
        if a_in:
            return TransitionDecision(Mode.ADS_IN_ODD, (GRANT_ADS,))
        return TransitionDecision(Mode.MRM_ACTIVE, _start_mrm(backed))
    if mode is Mode.ADS_OUT_OF_ODD and a_in:
        return TransitionDecision(Mode.ADS_IN_ODD)
    if mode is Mode.TELEOP_OUT_OF_ODD and teleop_ok:
        return TransitionDecision(Mode.TELEOP_IN_ODD)
    return None


# -- abstract inputs for table export and reachability ------------------------

_ABSTRACT_LANE = Lane([(0.0, 0.0), (1.0, 0.0)], 3.5)
_ABSTRACT_CORRIDOR = Corridor(_ABSTRACT_LANE, 0.0, 1.0, 3.5)


def abstract_verdict(inside: bool) -> ContainmentVerdict:
    if inside:
        return ContainmentVerdict(inside=True)
    return ContainmentVerdict(inside=False,
                              violated=(("*", None, "outside"),),
                              margin={"*": -1.0})


def abstract_verdicts(ads_inside: bool, teleop_inside: bool) -> VerdictPair:
    return VerdictPair(ads=abstract_verdict(ads_inside),
                       teleop=abstract_verdict(teleop_inside))


def abstract_capability(capable: bool) -> MrmCapability:
    return MrmCapability(capable=capable, required_m=0.0,
                         available_m=1.0 if capable else 0.0,
                         corridor=_ABSTRACT_CORRIDOR)


FULL_ALPHABET: tuple[ModeEvent, ...] = tuple(
    [ModeEvent(kind) for kind in EventKind]
    + [ModeEvent(kind, perceived=False) for kind in BORDER_EVENTS])

# Alphabet with no unnoticed border crossings and no deliberate domain
# exits: what a conforming vehicle with sound monitoring experiences.
SAFE_ALPHABET: tuple[ModeEvent, ...] = tuple(
    ev for ev in FULL_ALPHABET
    if ev.perceived and ev.kind is not EventKind.ACTIVE_LEAVE_TELEOP_ODD)

FULL_VERDICT_SPACE: tuple[tuple[bool, bool, bool], ...] = tuple(
    (a, t, c) for a in (True, False) for t in (True, False)
    for c in (True, False))


def decision_for(mode: Mode, event: ModeEvent | None, ads_inside: bool,
                 teleop_inside: bool, capable: bool,
                 policy: PolicyConfig) -> TransitionDecision:
    events = [event] if event is not None else []
    return step_mode(mode, events, abstract_verdicts(ads_inside, teleop_inside),
                     abstract_capability(capable), policy)


def export_decision_table(policy: PolicyConfig) -> str:
    """Every (mode, event kind, perceived, verdict pair, capability) input
    as one CSV row: 7 * 9 * 2 * 4 * 2 = 1008 rows plus header."""
    out = io.StringIO()
    out.write("mode,event,perceived,ads_inside,teleop_inside,capable,next,actions\n")
    for mode in Mode:
        for kind in EventKind:
            for perceived in (True, False):
                for a_in, t_in, capable in FULL_VERDICT_SPACE:
                    decision = decision_for(mode, ModeEvent(kind, perceived),
                                            a_in, t_in, capable, policy)
                    actions = "|".join(a.label() for a in decision.actions) or "none"
                    out.write(f"{mode.value},{kind.value},{int(perceived)},"
                              f"{int(a_in)},{int(t_in)},{int(capable)},"
                              f"{decision.next_mode.value},{actions}\n")
    return out.getvalue()


# -- reachability --------------------------------------------------------------

@dataclass(frozen=True)
class ReachStep:
    mode: Mode
    event: str          # event kind value, "-" for none
    perceived: bool
    ads_inside: bool
    teleop_inside: bool
    capable: bool
    next_mode: Mode
    actions: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "mode": self.mode.value,
            "event": self.event,
            "perceived": self.perceived,
            "ads_inside": self.ads_inside,
            "teleop_inside": self.teleop_inside,
            "capable": self.capable,
            "next": self.next_mode.value,
            "actions": list(self.actions),
        }


@dataclass
class ReachabilityResult:
    policy: Policy
    depth: int
    reachable: dict[Mode, int] = field(default_factory=dict)
    edges: list[ReachStep] = field(default_factory=list)
    parents: dict[Mode, ReachStep] = field(default_factory=dict)
    elapsed_s: float = 0.0

    def witness(self, target: Mode) -> list[ReachStep] | None:
        if target not in self.reachable:
            return None
        steps: list[ReachStep] = []
        mode = target
        while mode in self.parents:
            step = self.parents[mode]
            steps.append(step)
            mode = step.mode
        steps.reverse()
        return steps


def enumerate_reachable(initial: Mode, alphabet: tuple[ModeEvent, ...],
                        verdict_space: tuple[tuple[bool, bool, bool], ...],
                        policy: PolicyConfig,
                        max_depth: int = 12) -> ReachabilityResult:
    """Breadth-first exploration treating verdicts and capability as freely
    chosen by the environment at every step. Event ``None`` (a quiet tick)
    is always part of the input set so that verdict-driven moves count."""
    start = time.perf_counter()
    result = ReachabilityResult(policy=policy.kind, depth=max_depth)
    result.reachable[initial] = 0
    queue = deque([(initial, 0)])
    inputs: list[ModeEvent | None] = [None] + list(alphabet)
    seen_edges = set()
    while queue:
        mode, depth = queue.popleft()
        if depth >= max_depth:
            continue
        for event in inputs:
            for a_in, t_in, capable in verdict_space:
                decision = decision_for(mode, event, a_in, t_in, capable, policy)
                nxt = decision.next_mode
                step = ReachStep(
                    mode=mode,
                    event=event.kind.value if event else "-",
                    perceived=event.perceived if event else True,
                    ads_inside=a_in, teleop_inside=t_in, capable=capable,
                    next_mode=nxt,
                    actions=tuple(a.label() for a in decision.actions))
                edge_key = (mode, step.event, step.perceived, a_in, t_in,
                            capable, nxt)
                if nxt != mode and edge_key not in seen_edges:
                    seen_edges.add(edge_key)
                    result.edges.append(step)
                if nxt not in result.reachable:
                    result.reachable[nxt] = depth + 1
                    result.parents[nxt] = step
                    queue.append((nxt, depth + 1))
    result.elapsed_s = time.perf_counter() - start
    return result
