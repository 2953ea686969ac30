"""Atomic spaces: segmentation, sampling, preconditions, overlap."""

import math

import numpy as np
import pytest

from hdlab import sim, spaces
from hdlab.sim import Pose2


@pytest.mark.parametrize("task,count", [("teacup", 4), ("belt-bowl", 1),
                                        ("belt-spoon", 1), ("pens", 2)])
def test_segmentation_counts(task, count):
    segs = spaces.segment_task(task)
    assert len(segs) == count
    assert [s.index for s in segs] == list(range(count))


def test_segment_unknown_task():
    with pytest.raises(ValueError):
        spaces.segment_task("nope")


def test_sample_start_inside_region():
    state = sim.init_task("teacup", 0)
    space = spaces.segment_task("teacup")[0]
    rng = np.random.default_rng(1)
    for _ in range(200):
        pose = spaces.sample_start(space, state, rng)
        assert spaces.in_region(pose, space, state)
        assert 0.0 <= pose.x <= 1.0 and 0.0 <= pose.y <= 1.0


def test_sample_start_deterministic():
    state = sim.init_task("pens", 3)
    space = spaces.segment_task("pens")[0]
    a = spaces.sample_start(space, state, np.random.default_rng(5))
    b = spaces.sample_start(space, state, np.random.default_rng(5))
    assert a == b


def test_in_region_margin():
    state = sim.init_task("teacup", 0)
    space = spaces.segment_task("teacup")[0]
    anchor = spaces.resolve_anchor(space.start_region, state)
    hw = space.start_region.half_width
    edge = Pose2(anchor.x + hw * 0.95, anchor.y, anchor.theta)
    assert spaces.in_region(edge, space, state)
    assert not spaces.in_region(edge, space, state, margin=0.9)


def test_preconditions_match_phase():
    state = sim.init_task("teacup", 2)
    segs = spaces.segment_task("teacup")
    pose = Pose2(0.5, 0.5, -math.pi / 2)

    fresh = spaces.place_start(state, segs[0], pose)
    assert fresh.lid_angle == 0.0 and fresh.attached_id is None

    lid_open = spaces.place_start(state, segs[1], pose)
    assert lid_open.flags["lid_opened"]
    assert lid_open.lid_angle == sim.LID_OPEN_ANGLE

    in_hand = spaces.place_start(state, segs[2], pose)
    assert in_hand.attached_id == 0
    assert in_hand.obj(0).pose.x == pose.x

    placed = spaces.place_start(state, segs[3], pose)
    assert placed.flags["cup_placed"]
    assert placed.obj(0).pose.x == pytest.approx(sim.BOX_CENTER[0])


def test_closed_gripper_start():
    state = sim.init_task("teacup", 2)
    space = spaces.segment_task("teacup")[0]
    pose = Pose2(0.7, 0.3, -math.pi / 2)
    s = spaces.place_start(state, space, pose, closed_gripper=True)
    assert s.aperture == 0.0 and s.attached_id is None
    # in-hand spaces revert to their recovery precondition: the cup goes
    # back on the table and the gripper is closed on nothing
    cupspace = spaces.segment_task("teacup")[2]
    s = spaces.place_start(state, cupspace, pose, closed_gripper=True)
    assert s.attached_id is None and s.aperture == 0.0
    assert not s.flags["cup_grasped"] and s.flags["lid_opened"]
    assert s.obj(0).pose.x == state.obj(0).pose.x  # cup untouched


def test_pen_place_targets_specific_pen():
    state = sim.init_task("pens", 1)
    state = spaces.preplace_pens(state, 2)
    space = spaces.segment_task("pens")[1]
    segs = spaces.segment_task("pens")
    pose = Pose2(*sim.TRAY_CENTER, 0.0)
    s = spaces.place_start(state, space, pose)
    # preplaced pens alone must not satisfy the termination predicate
    assert not spaces.termination_reached(space, s, segs)


def test_preplace_pens_validation():
    state = sim.init_task("pens", 1)
    with pytest.raises(ValueError):
        spaces.preplace_pens(state, sim.PEN_COUNT)


def test_overlap_contract_quick():
    for task in ("teacup", "pens"):
        report = spaces.verify_overlap(task, trials=50, seed=0)
        assert report["passed"]
        for b in report["boundaries"]:
            assert b["fraction"] == 1.0
            assert b["expert_failures"] == 0


def test_pens_recovery_start_drops_pen():
    state = sim.init_task("pens", 3)
    place = spaces.segment_task("pens")[1]
    pose = Pose2(*sim.TRAY_CENTER, 0.0)
    s = spaces.place_start(state, place, pose, closed_gripper=True)
    assert s.attached_id is None and s.aperture == 0.0
    # the termination predicate still knows which pen must be placed
    assert s.flags["_place_target"] == 0
    segs = spaces.segment_task("pens")
    assert not spaces.termination_reached(place, s, segs)
