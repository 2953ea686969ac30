"""Deterministic scripted demonstrator.

The expert is a pure function of the workspace state: task progress is read
back from the sticky subtask flags and the attachment status, so no script
counter is kept. It moves in straight lines toward the active waypoint at
full per-step speed, aligns orientation on the way, and issues gripper
commands on arrival. A short dwell follows every gripper transition,
modeling actuation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import sim, spaces
from .sim import Action, Pose2, WorkspaceState, angle_diff, pen_angle_diff

ARRIVE_TOL = 0.015
# Decelerated grasp approaches creep in and close only once nearly on top of
# the grasp point, leaving slack for imitation timing errors.
GRASP_ARRIVE_TOL = 0.006
# Proportional final approach: inside the deceleration regime each step
# covers a fixed fraction of the remaining distance, floored well above
# zero. Arrival time then depends only weakly on the start distance, so
# the grasp moment is predictable from the approach context rather than
# from fine distance readings the raster cannot resolve. The floor is
# deliberately coarse: step magnitudes far below the per-step limit
# carry almost no mass in an absolute-error chunk loss and the imitator
# rounds them to zero, so every demonstrated motion step must stay
# comparable to the limit. A +/-1-tick close-timing error at the floor
# speed still lands inside the grasp tolerance.
APPROACH_GAIN = 0.5
APPROACH_FLOOR = 0.008
# Belt targets keep moving between the close decision and the grip taking
# effect, so arrival is declared tighter there.
ARRIVE_TOL_BELT = 0.01
ANGLE_ARRIVE_TOL = 0.2
# Hold position for several ticks after every gripper transition, modeling
# actuation time. Longer holds were tried so that a mis-timed close would
# park the imitator at the miss site until its next replan, but holds
# approaching the chunk length flood the corpus with indistinguishable
# stationary frames and stall the imitator; covering drifted post-miss
# states is instead the job of closed-gripper recovery starts.
GRIP_DWELL = 8
LID_ARC_STEP = 0.12         # bearing advance per tick while dragging the lid
# The lid clamps at its end stops while the attached end-effector keeps
# moving, so the expert overdrives the ee bearing past the stop before
# releasing: a release that comes a few frames early still leaves the lid
# pinned fully open (or closed).
LID_ARC_OVERDRIVE = 0.35
# While carrying the cup, route through the box-top anchor and only start
# the final descent once nearly centered above the box: the carry then
# passes through the place space's start region, keeping the handoff
# inside the overlap contract, and the descent is a pure vertical drop.
CARRY_GATE_X = 0.008
BELT_LIFT_Y = sim.BELT_Y - 0.18


class ExpertScriptError(RuntimeError):
    """No applicable waypoint: the script is exhausted."""


@dataclass
class RolloutRecord:
    success: bool
    frames: list = field(default_factory=list)   # (grid, proprio, action) triples
    final_state: WorkspaceState | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def _dwelling(state: WorkspaceState) -> bool:
    return state.t - state.last_grip_t <= GRIP_DWELL


def _drive(state: WorkspaceState, target_xy, target_theta, grip,
           decel: bool = False, speed: float | None = None) -> Action:
    ee = state.ee
    dx, dy = target_xy[0] - ee.x, target_xy[1] - ee.y
    dist = math.hypot(dx, dy)
    if speed is None:
        speed = sim.STEP_POS_LIMIT
        if decel:
            speed = min(speed, max(APPROACH_GAIN * dist, APPROACH_FLOOR))
    if dist > speed:
        s = speed / dist
        dx, dy = dx * s, dy * s
    if target_theta is None:
        dth = 0.0
    else:
        err = angle_diff(target_theta, ee.theta)
        dth = min(max(err, -sim.STEP_ROT_LIMIT), sim.STEP_ROT_LIMIT)
    return Action(dx, dy, dth, grip)


def _hover(state: WorkspaceState, grip: str) -> Action:
    return Action(0.0, 0.0, 0.0, grip)


def _close_or_reopen(state: WorkspaceState) -> Action:
    """Close on arrival at a grasp point.

    Attachment fires on the open->close transition only, so a closed empty
    gripper already at the grasp point (a recovery start sampled on top of
    the target) must open first or it would hover closed forever."""
    if state.aperture < 0.5 and state.attached_id is None:
        return _hover(state, "open")
    return _hover(state, "close")


def _grasp_approach(state: WorkspaceState, gp, theta) -> Action:
    """Drive straight at a grasp point, decelerating on final approach,
    and close on arrival.

    The straight-line field generalizes across approach directions: an
    imitator starting anywhere near the target sees locally consistent
    demonstrations converging on the same point.
    """
    d = math.hypot(state.ee.x - gp[0], state.ee.y - gp[1])
    if d <= GRASP_ARRIVE_TOL:
        return _close_or_reopen(state)
    return _drive(state, gp, theta, "open", decel=True)


def _teacup_action(state: WorkspaceState) -> Action:
    f = state.flags
    handle = sim.lid_handle_pos(state.lid_angle)

    if state.attached_id == 2:  # dragging the lid along its hinge arc
        if _dwelling(state):
            return _hover(state, "close")
        opening = not f["cup_placed"]
        # The ee's own bearing around the hinge, which keeps advancing even
        # after the lid clamps at an end stop.
        beta = math.atan2(state.ee.x - sim.HINGE[0],
                          -(state.ee.y - sim.HINGE[1]))
        if opening:
            stop = sim.LID_OPEN_ANGLE + LID_ARC_OVERDRIVE
            if beta >= stop - 1e-6:
                return _hover(state, "open")
            alpha = min(beta + LID_ARC_STEP, stop)
        else:
            stop = -LID_ARC_OVERDRIVE
            if beta <= stop + 1e-6:
                return _hover(state, "open")
            alpha = max(beta - LID_ARC_STEP, stop)
        radius = math.hypot(state.ee.x - sim.HINGE[0],
                            state.ee.y - sim.HINGE[1])
        target = (sim.HINGE[0] + radius * math.sin(alpha),
                  sim.HINGE[1] - radius * math.cos(alpha))
        return _drive(state, target, None, "close")

    if state.attached_id == 0:  # carrying the cup
        if _dwelling(state):
            return _hover(state, "close")
        if abs(state.ee.x - sim.BOX_CENTER[0]) > CARRY_GATE_X:
            return _drive(state, spaces.BOX_TOP_ANCHOR,
                          -math.pi / 2, "close")
        if math.hypot(state.ee.x - sim.BOX_CENTER[0],
                      state.ee.y - sim.BOX_CENTER[1]) <= ARRIVE_TOL:
            return _hover(state, "open")
        return _drive(state, sim.BOX_CENTER, -math.pi / 2, "close")

    if _dwelling(state):
        return _hover(state, "open")

    if not f["lid_opened"] or (f["cup_placed"] and not f["lid_closed_after_place"]):
        # Approach the handle to open (before pick) or close (after place).
        return _grasp_approach(state, handle, -math.pi / 2)

    if not f["cup_placed"]:
        cup = state.obj(0)
        return _grasp_approach(state, (cup.pose.x, cup.pose.y), -math.pi / 2)

    raise ExpertScriptError("teacup script exhausted")


def _belt_action(state: WorkspaceState) -> Action:
    target = state.find("spoon") if state.task_id == "belt-spoon" else state.obj(0)
    if state.attached_id == target.id:
        if _dwelling(state):
            return _hover(state, "close")
        return _drive(state, (state.ee.x, BELT_LIFT_Y), None, "close")
    if target.exited:
        raise ExpertScriptError("belt target left the workspace")
    if _dwelling(state):
        return _hover(state, "open")
    if state.task_id == "belt-spoon":
        gp = (target.pose.x, target.pose.y)
        theta = target.pose.theta
        aerr = abs(angle_diff(theta, state.ee.theta))
    else:
        gp = (target.pose.x, target.pose.y - sim.BOWL_RADIUS)
        theta = -math.pi / 2
        aerr = 0.0
    if (math.hypot(state.ee.x - gp[0], state.ee.y - gp[1]) <= ARRIVE_TOL_BELT
            and aerr <= ANGLE_ARRIVE_TOL):
        return _close_or_reopen(state)
    return _drive(state, gp, theta, "open")


def _pens_action(state: WorkspaceState) -> Action:
    if state.attached_id is not None:
        if _dwelling(state):
            return _hover(state, "close")
        if math.hypot(state.ee.x - sim.TRAY_CENTER[0],
                      state.ee.y - sim.TRAY_CENTER[1]) <= ARRIVE_TOL:
            return _hover(state, "open")
        return _drive(state, sim.TRAY_CENTER, None, "close")
    if _dwelling(state):
        return _hover(state, "open")
    pen = spaces._lowest_unplaced_pen(state)
    if pen is None:
        raise ExpertScriptError("pens script exhausted")
    # Align with the nearest end-to-end equivalent of the pen's axis.
    theta = state.ee.theta + pen_angle_diff(pen.pose.theta, state.ee.theta)
    if (math.hypot(state.ee.x - pen.pose.x, state.ee.y - pen.pose.y) <= GRASP_ARRIVE_TOL
            and abs(pen_angle_diff(pen.pose.theta, state.ee.theta)) <= ANGLE_ARRIVE_TOL):
        return _close_or_reopen(state)
    return _drive(state, (pen.pose.x, pen.pose.y), theta, "open", decel=True)


def expert_action(state: WorkspaceState, space=None) -> Action:
    """One expert action for the current state; deterministic."""
    if state.task_id == "teacup":
        return _teacup_action(state)
    if state.task_id in sim.BELT_TASKS:
        return _belt_action(state)
    if state.task_id == "pens":
        return _pens_action(state)
    raise ValueError(f"unknown task id {state.task_id!r}")


def expert_rollout(state: WorkspaceState, space=None, cap: int = 0) -> RolloutRecord:
    """Run the expert until the space's termination predicate (or full-task
    success when no space is given) or the step cap.

    Each recorded frame holds the observation triple taken before stepping.
    A hit cap is reported as an expert failure carrying the partial
    trajectory.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    task_spaces = spaces.segment_task(state.task_id) if space is not None else None

    def done(s):
        if space is None:
            return sim.is_success(s)
        return spaces.termination_reached(space, s, task_spaces)

    frames = []
    for _ in range(cap):
        if done(state):
            return RolloutRecord(True, frames, state)
        action = expert_action(state, space)
        frames.append((sim.rasterize(state), sim.proprio(state), action.encode()))
        state = sim.step(state, action)
    if done(state):
        return RolloutRecord(True, frames, state)
    return RolloutRecord(False, frames, state)
