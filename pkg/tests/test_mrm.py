from __future__ import annotations

import math
import random

import pytest
from shapely.geometry import Polygon, box

from teleodd.mrm import (
    MrmParams,
    MrmPlanningError,
    assess_capability,
    blocked_intervals,
    constant_profile,
    execute_mrm_step,
    plan_mrm,
    plan_profile,
    risk_of_rear_end,
    straight_line_brake,
)
from teleodd.world import (
    ControlInput,
    FollowerParams,
    Lane,
    Obstacle,
    VehicleState,
    clamp_control,
    step_vehicle,
)

from oracles import exact_min_gap, stopping_distance, stopping_time

PARAMS = MrmParams()  # a_max 4, margin 5, corridor 3, sensing 200, trigger 2


def straight_lane(length: float = 600.0) -> Lane:
    return Lane([(0.0, 0.0), (length, 0.0)], 3.5)


# -- capability ----------------------------------------------------------------


def test_capability_worked_example():
    # 20 m/s needs 20^2/(2*4) + 5 = 55 m; a blocker at 105 m leaves exactly
    # 105 m of corridor, so the vehicle is capable with 50 m to spare
    lane = straight_lane()
    state = VehicleState(x=0, y=0, heading=0, speed=20.0)
    cap = assess_capability(state, lane,
                            [Obstacle("truck", 107.5, 0.0, 5.0, 2.0)], PARAMS)
    assert cap.required_m == pytest.approx(55.0)
    assert cap.available_m == pytest.approx(105.0)
    assert cap.capable
    assert cap.margin == pytest.approx(50.0)


def test_capability_capped_by_sensing_range_and_lane_end():
    lane = straight_lane(120.0)
    state = VehicleState(x=0, y=0, heading=0, speed=10.0)
    cap = assess_capability(state, lane, [], PARAMS)
    assert cap.available_m == pytest.approx(120.0)  # lane ends first
    near = assess_capability(VehicleState(0, 0, 0, 10.0), straight_lane(), [],
                             MrmParams(sensing_range_m=60.0))
    assert near.available_m == pytest.approx(60.0)


def test_capability_ignores_obstacles_behind():
    lane = straight_lane()
    state = VehicleState(x=50, y=0, heading=0, speed=10.0)
    cap = assess_capability(state, lane,
                            [Obstacle("passed", 20.0, 0.0, 4.0, 2.0)], PARAMS)
    assert cap.available_m == pytest.approx(200.0)


def test_obstacle_outside_corridor_width_does_not_block():
    lane = straight_lane()
    state = VehicleState(x=0, y=0, heading=0, speed=20.0)
    # corridor half-width 1.5; cone at lateral 2.0 stays clear of it
    cap = assess_capability(state, lane,
                            [Obstacle("cone", 100.0, 2.0, 0.5, 0.5)], PARAMS)
    assert cap.available_m == pytest.approx(200.0)
    grazing = assess_capability(
        state, lane, [Obstacle("cone", 100.0, 1.6, 0.5, 0.5)], PARAMS)
    assert grazing.available_m == pytest.approx(99.75)


# -- blocked intervals vs geometry oracle ---------------------------------------


def test_blocked_intervals_match_shapely_on_straight_lane():
    lane = straight_lane(300.0)
    width = 3.0
    band = box(0.0, -width / 2, 300.0, width / 2)
    rng = random.Random(41)
    for _ in range(200):
        obstacle = Obstacle("o", rng.uniform(5, 295), rng.uniform(-3, 3),
                            rng.uniform(0.3, 8), rng.uniform(0.3, 3),
                            rng.uniform(0, math.pi))
        got = blocked_intervals(lane, [obstacle], width)
        inter = Polygon(obstacle.corners()).intersection(band)
        if inter.is_empty or inter.area == 0.0:
            # tangent contact may produce a degenerate sliver either way
            assert got == [] or got[0][1] - got[0][0] < 1e-6
            continue
        assert len(got) == 1
        lo, hi = got[0]
        minx, _, maxx, _ = inter.bounds
        assert lo == pytest.approx(minx, abs=1e-6)
        assert hi == pytest.approx(maxx, abs=1e-6)


def test_blocked_intervals_sorted_across_obstacles():
    lane = straight_lane()
    obstacles = [Obstacle("b", 200.0, 0.0, 4.0, 2.0),
                 Obstacle("a", 80.0, 0.5, 4.0, 2.0)]
    ivals = blocked_intervals(lane, obstacles, 3.0)
    assert len(ivals) == 2
    assert ivals[0][0] == pytest.approx(78.0)
    assert ivals[1][0] == pytest.approx(198.0)


def test_blocked_intervals_on_bent_lane():
    lane = Lane([(0.0, 0.0), (100.0, 0.0), (100.0, 100.0)], 3.5)
    # obstacle sitting on the second leg, 30 m past the corner
    ivals = blocked_intervals(lane, [Obstacle("o", 100.0, 30.0, 4.0, 2.0,
                                              math.pi / 2)], 3.0)
    assert len(ivals) == 1
    lo, hi = ivals[0]
    assert lo == pytest.approx(128.0)
    assert hi == pytest.approx(132.0)


# -- planning --------------------------------------------------------------------


def plan_for(speed: float, available: float, params: MrmParams = PARAMS):
    lane = straight_lane()
    state = VehicleState(x=0, y=0, heading=0, speed=speed)
    blocker = Obstacle("wall", available + 2.5, 0.0, 5.0, 3.0)
    cap = assess_capability(state, lane, [blocker], params)
    return cap, state


def test_plan_worked_example():
    cap, state = plan_for(20.0, 105.0)
    plan = plan_mrm(state, cap, PARAMS)
    assert plan.decel_mps2 == pytest.approx(2.0)
    assert plan.stop_distance_m == pytest.approx(100.0)
    assert plan.target_stop_s == pytest.approx(100.0)
    assert (plan.target_x, plan.target_y) == (pytest.approx(100.0),
                                              pytest.approx(0.0))


def test_plan_at_exact_capability_boundary_uses_ceiling():
    cap, state = plan_for(20.0, 55.0)
    assert cap.capable
    plan = plan_mrm(state, cap, PARAMS)
    assert plan.decel_mps2 == pytest.approx(4.0)
    assert plan.stop_distance_m == pytest.approx(50.0)


def test_plan_refuses_incapable_assessment():
    cap, state = plan_for(20.0, 54.0)
    assert not cap.capable
    with pytest.raises(MrmPlanningError, match="not capable"):
        plan_mrm(state, cap, PARAMS)


def test_plan_at_standstill_is_a_no_op():
    cap, state = plan_for(0.0, 105.0)
    plan = plan_mrm(state, cap, PARAMS)
    assert plan.decel_mps2 == 0.0
    assert plan.stop_distance_m == 0.0
    assert plan.done(state)
    assert plan_profile(plan) == []


# -- execution -------------------------------------------------------------------


def run_mrm(speed: float, available: float, dt: float = 0.01,
            params: MrmParams = PARAMS, lateral_offset: float = 0.0):
    lane = straight_lane()
    state = VehicleState(x=0, y=lateral_offset, heading=0, speed=speed)
    blocker = Obstacle("wall", available + 2.5, 0.0, 5.0, 3.0)
    cap = assess_capability(state, lane, [blocker], params)
    plan = plan_mrm(state, cap, params)
    history = [state]
    for _ in range(int(120 / dt)):
        u = clamp_control(execute_mrm_step(plan, state, params.a_max))
        state = step_vehicle(state, u, dt)
        history.append(state)
        if plan.done(state):
            break
    return plan, state, history


def test_execution_stops_at_planned_point_within_two_percent():
    for speed, available in ((20.0, 105.0), (13.9, 60.0), (8.0, 30.0),
                             (25.0, 150.0)):
        plan, final, _ = run_mrm(speed, available)
        assert final.speed == 0.0
        err = abs(final.x - plan.target_stop_s)
        assert err <= 0.02 * plan.stop_distance_m


def test_execution_keeps_the_corridor_and_recovers_offset():
    plan, final, history = run_mrm(15.0, 80.0, lateral_offset=0.9)
    assert all(not plan.off_corridor(s) for s in history)
    assert abs(final.y) < 0.3


def test_off_corridor_detection():
    plan, _, _ = run_mrm(15.0, 80.0)
    assert plan.off_corridor(VehicleState(x=10.0, y=1.6, heading=0, speed=5))
    assert not plan.off_corridor(VehicleState(x=10.0, y=1.4, heading=0, speed=5))


def test_execution_never_exceeds_ceiling():
    plan, _, history = run_mrm(20.0, 105.0)
    state = history[0]
    for nxt in history[1:]:
        assert (state.speed - nxt.speed) / 0.01 <= PARAMS.a_max + 1e-6
        state = nxt


# -- naive baseline ----------------------------------------------------------------


def test_straight_line_brake_length_matches_stopping_time():
    state = VehicleState(x=0, y=0, heading=0, speed=13.9)
    inputs = straight_line_brake(state, 8.0, 0.01)
    assert len(inputs) == math.ceil(stopping_time(13.9, 8.0) / 0.01)
    assert all(u == ControlInput(0.0, -8.0) for u in inputs)
    dist = 0.0
    for u in inputs:
        dist += state.speed * 0.01
        state = step_vehicle(state, u, 0.01)
    assert state.speed == 0.0
    assert dist == pytest.approx(stopping_distance(13.9, 8.0), rel=0.01)


def test_straight_line_brake_rejects_nonpositive_decel():
    with pytest.raises(ValueError):
        straight_line_brake(VehicleState(0, 0, 0, 10), 0.0, 0.01)


# -- rear-end risk ------------------------------------------------------------------


FOLLOWER = FollowerParams(gap_m=15.0, speed_mps=13.9, reaction_s=1.0,
                          decel_mps2=6.0)


def test_hard_lead_braking_causes_rear_end():
    report = risk_of_rear_end(13.9, constant_profile(8.0), FOLLOWER)
    assert report.collision
    assert report.impact_speed_mps > 0
    # matches the stopping-distance account: 12.08 + 13.9 > 15 + 16.10
    assert (stopping_distance(13.9, 6.0) + 13.9 * 1.0
            > 15.0 + stopping_distance(13.9, 8.0))


def test_gentle_lead_braking_is_safe():
    for decel in (3.5, 3.0, 2.0, 1.76):
        report = risk_of_rear_end(13.9, constant_profile(decel), FOLLOWER)
        assert not report.collision, f"decel {decel} should be safe"
        assert report.min_gap_m > 0


def test_risk_matches_closed_form_across_sweep():
    for reaction in (0.0, 0.5, 1.0, 1.5, 2.0):
        for lead_decel in (3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0):
            follower = FollowerParams(15.0, 13.9, reaction, 6.0)
            report = risk_of_rear_end(13.9, constant_profile(lead_decel),
                                      follower)
            exact = exact_min_gap(15.0, 13.9, reaction, 6.0, lead_decel)
            if exact > 0.05:
                assert not report.collision
                assert report.min_gap_m == pytest.approx(exact, abs=0.05)
            elif exact < -0.05:
                assert report.collision


def test_risk_monotone_in_lead_decel_and_gap():
    gaps = [risk_of_rear_end(13.9, constant_profile(d), FOLLOWER).min_gap_m
            for d in (1.0, 2.0, 3.0)]
    assert gaps[0] > gaps[1] > gaps[2]
    roomy = FollowerParams(30.0, 13.9, 1.0, 6.0)
    assert (risk_of_rear_end(13.9, constant_profile(8.0), roomy).min_gap_m
            > risk_of_rear_end(13.9, constant_profile(8.0), FOLLOWER).min_gap_m)


def test_risk_profile_with_delay_segment():
    # 2 s of no braking first: follower onset shifts with it
    delayed = [(2.0, 0.0), (math.inf, 8.0)]
    immediate = risk_of_rear_end(13.9, constant_profile(8.0), FOLLOWER)
    shifted = risk_of_rear_end(13.9, delayed, FOLLOWER)
    assert shifted.collision == immediate.collision
    assert shifted.time_s == pytest.approx(immediate.time_s + 2.0, abs=0.01)
