from __future__ import annotations

import csv
import io
from pathlib import Path

import pytest

from teleodd.modes import (
    FULL_ALPHABET,
    FULL_VERDICT_SPACE,
    SAFE_ALPHABET,
    EventKind,
    Mode,
    ModeEvent,
    Policy,
    PolicyConfig,
    RiskClass,
    abstract_capability,
    abstract_verdicts,
    classify_risk,
    decision_for,
    enumerate_reachable,
    export_decision_table,
    step_mode,
)

from oracles import mode_table_oracle

T2 = PolicyConfig(kind=Policy.ODD_T2)
T1 = PolicyConfig(kind=Policy.ODD_T1)
GOLDEN = Path(__file__).parent / "golden"

BORDER_KINDS = {EventKind.BORDER_REACHED_ADS, EventKind.BORDER_REACHED_TELEOP}


def golden_rows(policy_name: str) -> list[dict]:
    path = GOLDEN / f"decision_table_{policy_name}.csv"
    return list(csv.DictReader(path.open()))


def table_rows(policy: PolicyConfig) -> list[dict]:
    return list(csv.DictReader(io.StringIO(export_decision_table(policy))))


@pytest.mark.parametrize("policy,name", [(T2, "odd_t2"), (T1, "odd_t1")])
def test_exported_table_matches_committed_golden(policy, name):
    committed = (GOLDEN / f"decision_table_{name}.csv").read_text()
    assert export_decision_table(policy) == committed


@pytest.mark.parametrize("policy,name", [(T2, "odd_t2"), (T1, "odd_t1")])
def test_every_row_agrees_with_independent_oracle(policy, name):
    rows = golden_rows(name)
    assert len(rows) == 1008
    for r in rows:
        nxt, actions = mode_table_oracle(
            Mode(r["mode"]), EventKind(r["event"]), r["perceived"] == "1",
            r["ads_inside"] == "1", r["teleop_inside"] == "1",
            r["capable"] == "1", policy.kind)
        assert nxt.value == r["next"], r
        assert ("|".join(actions) or "none") == r["actions"], r


def expect(policy, mode, event, a, t, c, next_mode, actions):
    decision = decision_for(mode, event, a, t, c, policy)
    assert decision.next_mode is next_mode, (mode, event, a, t, c)
    assert tuple(x.label() for x in decision.actions) == actions


def test_hand_checked_transitions_capability_gated():
    ads, tel = Mode.ADS_IN_ODD, Mode.TELEOP_IN_ODD
    border_ads = ModeEvent(EventKind.BORDER_REACHED_ADS)
    disconnect = ModeEvent(EventKind.DISCONNECT)
    # leaving the ADS domain hands over only where the maneuver subsystem
    # still backs a retreat and the operator's domain holds
    expect(T2, ads, border_ads, 1, 1, 1, tel, ("grant_control:teleop",))
    expect(T2, ads, border_ads, 1, 1, 0, Mode.MRM_ACTIVE,
           ("start_mrm", "log_hazard"))
    expect(T2, ads, border_ads, 1, 0, 1, Mode.MRM_ACTIVE, ("start_mrm",))
    # an unnoticed crossing is a hazard, not a handover
    expect(T2, ads, ModeEvent(EventKind.BORDER_REACHED_ADS, perceived=False),
           1, 1, 1, Mode.ADS_OUT_OF_ODD, ("log_hazard",))
    # losing the operator mid-teleop starts the maneuver
    expect(T2, tel, disconnect, 1, 1, 1, Mode.MRM_ACTIVE, ("start_mrm",))
    expect(T2, tel, disconnect, 0, 1, 0, Mode.MRM_ACTIVE,
           ("start_mrm", "log_hazard"))
    # a noticed crossing while already outside is a late retreat
    expect(T2, Mode.ADS_OUT_OF_ODD, border_ads, 0, 0, 1, Mode.MRM_ACTIVE,
           ("start_mrm",))


def test_hand_checked_transitions_naive_policy():
    tel = Mode.TELEOP_IN_ODD
    disconnect = ModeEvent(EventKind.DISCONNECT)
    # capability is invisible to the naive policy
    expect(T1, Mode.ADS_IN_ODD, ModeEvent(EventKind.BORDER_REACHED_ADS),
           1, 1, 0, tel, ("grant_control:teleop",))
    expect(T1, tel, disconnect, 1, 1, 0, Mode.MRM_ACTIVE, ("start_mrm",))
    # the unreasonable-risk hole: connection lost, retreat backed by nothing
    expect(T1, tel, disconnect, 0, 1, 1, Mode.UNDEFINED,
           ("flag_unreasonable_risk",))
    expect(T1, tel, ModeEvent(EventKind.SUBSYSTEM_ERROR), 0, 1, 1,
           Mode.UNDEFINED, ("flag_unreasonable_risk",))
    expect(T1, Mode.ADS_OUT_OF_ODD, ModeEvent(EventKind.BORDER_REACHED_ADS),
           0, 0, 1, Mode.MRM_ACTIVE, ("start_mrm", "log_hazard"))


def test_handover_rescue_from_flagged_states():
    expect(T2, Mode.TELEOP_OUT_OF_ODD,
           ModeEvent(EventKind.HANDOVER_REQUEST_TO_ADS), 1, 0, 1,
           Mode.ADS_IN_ODD, ("grant_control:ads",))
    expect(T2, Mode.ADS_OUT_OF_ODD,
           ModeEvent(EventKind.HANDOVER_REQUEST_TO_TELEOP), 0, 1, 1,
           Mode.TELEOP_IN_ODD, ("grant_control:teleop",))
    # rescue denied when the target domain does not hold
    expect(T2, Mode.TELEOP_OUT_OF_ODD,
           ModeEvent(EventKind.HANDOVER_REQUEST_TO_ADS), 0, 0, 1,
           Mode.TELEOP_OUT_OF_ODD, ())


def test_quiescence_identity():
    consistent = {
        Mode.ADS_IN_ODD: (1, 0, 1),
        Mode.TELEOP_IN_ODD: (0, 1, 1),
        Mode.ADS_OUT_OF_ODD: (0, 1, 1),
        Mode.TELEOP_OUT_OF_ODD: (1, 0, 1),
        Mode.MRM_ACTIVE: (1, 1, 1),
        Mode.MINIMAL_RISK_CONDITION: (1, 1, 1),
        Mode.UNDEFINED: (1, 1, 1),
    }
    for policy in (T2, T1):
        for mode, (a, t, c) in consistent.items():
            decision = decision_for(mode, None, a, t, c, policy)
            assert decision.next_mode is mode, (policy.kind, mode)
            assert decision.actions == ()


def test_verdict_driven_moves_without_events():
    # domain exit while believed inside acts like a perceived border
    expect(T2, Mode.ADS_IN_ODD, None, 0, 1, 1, Mode.TELEOP_IN_ODD,
           ("grant_control:teleop",))
    expect(T2, Mode.ADS_IN_ODD, None, 0, 0, 1, Mode.MRM_ACTIVE, ("start_mrm",))
    expect(T2, Mode.TELEOP_IN_ODD, None, 1, 0, 1, Mode.ADS_IN_ODD,
           ("grant_control:ads",))
    # capability loss alone evicts a capability-gated teleop session
    expect(T2, Mode.TELEOP_IN_ODD, None, 0, 1, 0, Mode.MRM_ACTIVE,
           ("start_mrm", "log_hazard"))
    expect(T1, Mode.TELEOP_IN_ODD, None, 0, 1, 0, Mode.TELEOP_IN_ODD, ())
    # re-entry clears the flagged states silently
    expect(T2, Mode.ADS_OUT_OF_ODD, None, 1, 0, 0, Mode.ADS_IN_ODD, ())
    expect(T2, Mode.TELEOP_OUT_OF_ODD, None, 0, 1, 1, Mode.TELEOP_IN_ODD, ())


@pytest.mark.parametrize("name", ["odd_t2", "odd_t1"])
def test_start_mrm_exactly_on_maneuver_entry(name):
    for r in golden_rows(name):
        starts = "start_mrm" in r["actions"].split("|")
        enters = r["next"] == "MrmActive" and r["mode"] != "MrmActive"
        assert starts == enters, r


@pytest.mark.parametrize("name", ["odd_t2", "odd_t1"])
def test_flag_exactly_on_undefined_entry_or_active_leave(name):
    for r in golden_rows(name):
        flagged = "flag_unreasonable_risk" in r["actions"].split("|")
        into_undefined = r["next"] == "Undefined" and r["mode"] != "Undefined"
        leave = (r["event"] == "ActiveLeaveTeleopOdd"
                 and r["mode"] == "TeleopInOdd")
        assert flagged == (into_undefined or leave), r


@pytest.mark.parametrize("name", ["odd_t2", "odd_t1"])
def test_undefined_only_entered_from_flagged_states_or_naive_hole(name):
    for r in golden_rows(name):
        if r["next"] != "Undefined" or r["mode"] == "Undefined":
            continue
        if r["mode"] in ("AdsOutOfOdd", "TeleopOutOfOdd"):
            assert r["event"] in ("Disconnect", "SubsystemError"), r
        else:
            assert name == "odd_t1", r
            assert r["mode"] == "TeleopInOdd"
            assert r["event"] in ("Disconnect", "SubsystemError")
            assert r["ads_inside"] == "0"


@pytest.mark.parametrize("name", ["odd_t2", "odd_t1"])
def test_maneuver_traps_and_terminal_states_hold(name):
    for r in golden_rows(name):
        if r["mode"] == "MrmActive":
            if r["event"] == "MrmComplete":
                assert r["next"] == "MinimalRiskCondition"
            else:
                assert r["next"] == "MrmActive"
            assert r["actions"] == "none"
        if r["mode"] in ("MinimalRiskCondition", "Undefined"):
            assert r["next"] == r["mode"]
            assert r["actions"] == "none"


@pytest.mark.parametrize("policy", [T2, T1])
def test_perceived_flag_only_matters_on_borders(policy):
    for kind in EventKind:
        if kind in BORDER_KINDS:
            continue
        for mode in Mode:
            for a, t, c in FULL_VERDICT_SPACE:
                noticed = decision_for(mode, ModeEvent(kind, True), a, t, c,
                                       policy)
                missed = decision_for(mode, ModeEvent(kind, False), a, t, c,
                                      policy)
                assert noticed == missed


def test_event_priority_and_dedupe():
    verdicts = abstract_verdicts(True, True)
    cap = abstract_capability(True)
    # a disconnect in the same tick as a handover request wins
    both = step_mode(Mode.TELEOP_IN_ODD,
                     [ModeEvent(EventKind.HANDOVER_REQUEST_TO_ADS),
                      ModeEvent(EventKind.DISCONNECT)], verdicts, cap, T2)
    alone = step_mode(Mode.TELEOP_IN_ODD, [ModeEvent(EventKind.DISCONNECT)],
                      verdicts, cap, T2)
    assert both == alone
    assert both.next_mode is Mode.MRM_ACTIVE
    reordered = step_mode(Mode.TELEOP_IN_ODD,
                          [ModeEvent(EventKind.DISCONNECT),
                           ModeEvent(EventKind.HANDOVER_REQUEST_TO_ADS)],
                          verdicts, cap, T2)
    assert reordered == both
    # a handover offer outranks a border report arriving the same tick
    mixed = step_mode(Mode.ADS_IN_ODD,
                      [ModeEvent(EventKind.BORDER_REACHED_ADS, perceived=False),
                       ModeEvent(EventKind.HANDOVER_REQUEST_TO_TELEOP)],
                      verdicts, cap, T2)
    assert mixed.next_mode is Mode.TELEOP_IN_ODD
    duplicated = step_mode(Mode.TELEOP_IN_ODD,
                           [ModeEvent(EventKind.DISCONNECT)] * 3, verdicts,
                           cap, T2)
    assert duplicated == alone


def test_risk_classification():
    assert classify_risk(Mode.ADS_IN_ODD) is RiskClass.OPERATIONAL
    assert classify_risk(Mode.TELEOP_IN_ODD) is RiskClass.FAIL_DEGRADED
    assert classify_risk(Mode.TELEOP_IN_ODD, False) is RiskClass.OPERATIONAL
    assert classify_risk(Mode.MRM_ACTIVE) is RiskClass.FAIL_SAFE
    assert classify_risk(Mode.MINIMAL_RISK_CONDITION) is RiskClass.FAIL_SAFE
    assert classify_risk(Mode.ADS_OUT_OF_ODD) is RiskClass.FAIL_UNSAFE
    assert classify_risk(Mode.TELEOP_OUT_OF_ODD) is RiskClass.FAIL_UNSAFE
    assert classify_risk(Mode.UNDEFINED) is RiskClass.UNDEFINED


# -- reachability ----------------------------------------------------------------


def replay_witness(initial: Mode, steps, policy: PolicyConfig) -> Mode:
    mode = initial
    for step in steps:
        assert step.mode is mode, "witness chain is broken"
        event = (None if step.event == "-"
                 else ModeEvent(EventKind(step.event), step.perceived))
        decision = decision_for(mode, event, step.ads_inside,
                                step.teleop_inside, step.capable, policy)
        assert decision.next_mode is step.next_mode
        mode = decision.next_mode
    return mode


def test_capability_gated_policy_keeps_the_safe_envelope():
    result = enumerate_reachable(Mode.ADS_IN_ODD, SAFE_ALPHABET,
                                 FULL_VERDICT_SPACE, T2, max_depth=12)
    assert result.elapsed_s < 5.0
    assert set(result.reachable) == {Mode.ADS_IN_ODD, Mode.TELEOP_IN_ODD,
                                     Mode.MRM_ACTIVE,
                                     Mode.MINIMAL_RISK_CONDITION}


def test_naive_policy_reaches_undefined_within_three_steps():
    result = enumerate_reachable(Mode.ADS_IN_ODD, SAFE_ALPHABET,
                                 FULL_VERDICT_SPACE, T1, max_depth=12)
    assert Mode.UNDEFINED in result.reachable
    witness = result.witness(Mode.UNDEFINED)
    assert witness is not None and len(witness) <= 3
    assert replay_witness(Mode.ADS_IN_ODD, witness, T1) is Mode.UNDEFINED
    record = witness[-1].to_record()
    assert record["next"] == "Undefined"
    assert "flag_unreasonable_risk" in record["actions"]


def test_unnoticed_crossings_defeat_even_the_gated_policy():
    result = enumerate_reachable(Mode.ADS_IN_ODD, FULL_ALPHABET,
                                 FULL_VERDICT_SPACE, T2, max_depth=12)
    assert Mode.UNDEFINED in result.reachable
    witness = result.witness(Mode.UNDEFINED)
    assert replay_witness(Mode.ADS_IN_ODD, witness, T2) is Mode.UNDEFINED


def test_witness_for_unreached_mode_is_none():
    result = enumerate_reachable(Mode.ADS_IN_ODD, SAFE_ALPHABET,
                                 FULL_VERDICT_SPACE, T2, max_depth=12)
    assert result.witness(Mode.UNDEFINED) is None
