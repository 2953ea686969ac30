"""Deterministic 2D kinematic manipulation workspace.

The workspace is the unit square, viewed top-down. All lengths map 1 cm to
0.01 units so conveyor speeds keep their real-world numeric values (m/s).
Control runs at a fixed 30 Hz; every per-step constant below is expressed
per tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CONTROL_HZ = 30
STEP_POS_LIMIT = 0.02       # max end-effector displacement per tick (m)
STEP_ROT_LIMIT = 0.15       # max rotation per tick (rad)
GRASP_POS_TOL = 0.02        # close succeeds within this distance of a grasp locus
GRASP_ANG_TOL = 0.3         # orientation tolerance for flagged grasp points
EE_RADIUS = 0.025

GRID_SIZE = 32
GRID_CHANNELS = 6

HOME_POSE = (0.5, 0.9, -math.pi / 2)

TASKS = ("teacup", "belt-bowl", "belt-spoon", "pens")
BELT_TASKS = ("belt-bowl", "belt-spoon")
BELT_SPEEDS = (0.08, 0.16)

# Episode horizon caps (ticks).
HORIZON_CAPS = {"teacup": 700, "belt-bowl": 400, "belt-spoon": 400, "pens": 1200}
ATOMIC_CAP = 200

# Teacup task geometry. The box lid rotates about a hinge on the box's top
# edge; its handle sweeps a quarter circle from "closed" (hanging below the
# hinge, over the box) to "open" (swung out to the right).
BOX_CENTER = (0.72, 0.35)
BOX_HALF = 0.08
HINGE = (0.72, 0.43)
LID_RADIUS = 0.16
LID_OPEN_ANGLE = math.pi / 2
LID_OPEN_TOL = 0.05
LID_CLOSED_TOL = 0.05
# Rendered cup footprint (rendering only; physics treats the cup as a
# point). Drawn generously: a larger disc covers more raster cells, so the
# blob centroid tracks the true cup centre with finer sub-cell precision,
# which the policy needs to resolve the final approach.
CUP_RADIUS = 0.075
CUP_XRANGE = (0.15, 0.4)
CUP_YRANGE = (0.3, 0.7)
PLACE_TOL = 0.05            # Chebyshev distance for "inside container"

# Conveyor geometry.
BELT_Y = 0.5
BELT_HALF = 0.05
BELT_SPAWN_XRANGE = (0.0, 0.25)
BELT_EXIT_X = 1.05
LIFT_CLEARANCE = 0.1        # |y - BELT_Y| needed to count as lifted off
BOWL_RADIUS = 0.05

# Thin elongated objects (spoon, pens).
STICK_LENGTH = 0.1
STICK_HALF_WIDTH = 0.012
SPOON_HEAD_RADIUS = 0.02

PEN_COUNT = 5
PEN_XRANGE = (0.1, 0.55)
PEN_YRANGE = (0.35, 0.75)
PEN_MIN_SPACING = 0.09
TRAY_CENTER = (0.78, 0.18)
TRAY_HALF = 0.07

GRASPABLE = {"cup", "box-lid", "bowl", "spoon", "pen", "belt-item"}

# Objects the policy is supposed to attach in each task; anything else
# counts as a co-grasp.
INTENDED = {
    "teacup": {"cup", "box-lid"},
    "belt-bowl": {"bowl"},
    "belt-spoon": {"spoon"},
    "pens": {"pen"},
}

SUBTASK_COUNTS = {"teacup": 4, "belt-bowl": 2, "belt-spoon": 2, "pens": PEN_COUNT}


def wrap_angle(theta: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    theta = math.fmod(theta, 2 * math.pi)
    if theta <= -math.pi:
        theta += 2 * math.pi
    elif theta > math.pi:
        theta -= 2 * math.pi
    return theta


def angle_diff(a: float, b: float) -> float:
    return wrap_angle(a - b)


def pen_angle_diff(a: float, b: float) -> float:
    """Angle difference modulo pi (pens are symmetric end to end)."""
    d = math.fmod(a - b, math.pi)
    if d > math.pi / 2:
        d -= math.pi
    elif d <= -math.pi / 2:
        d += math.pi
    return d


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))


# Numeric range of the grip channel in encoded actions. Kept at the same
# order of magnitude as the motion channels so the chunk-regression loss
# weights all coordinates comparably.
GRIP_SCALE = 0.05


@dataclass(frozen=True)
class Action:
    dx: float
    dy: float
    dtheta: float
    grip: str  # "open" | "close" | "hold"

    GRIP_CODES = {"open": -GRIP_SCALE, "hold": 0.0, "close": GRIP_SCALE}

    def clipped(self) -> "Action":
        norm = math.hypot(self.dx, self.dy)
        if norm > STEP_POS_LIMIT:
            s = STEP_POS_LIMIT / norm
            dx, dy = self.dx * s, self.dy * s
        else:
            dx, dy = self.dx, self.dy
        dth = min(max(self.dtheta, -STEP_ROT_LIMIT), STEP_ROT_LIMIT)
        return Action(dx, dy, dth, self.grip)

    def encode(self) -> np.ndarray:
        return np.array(
            [self.dx, self.dy, self.dtheta, self.GRIP_CODES[self.grip]],
            dtype=np.float32,
        )

    @staticmethod
    def decode(vec) -> "Action":
        # Wide hold band: a regressed grip value between the demonstrated
        # extremes (+/-GRIP_SCALE) reflects an uncertain blend of open and
        # close targets, and decoding it as "hold" keeps the gripper state
        # unchanged until a confident prediction appears, rather than
        # letting near-threshold noise fire spurious transitions.
        g = float(vec[3])
        if g > 2.0 * GRIP_SCALE / 3.0:
            grip = "close"
        elif g < -2.0 * GRIP_SCALE / 3.0:
            grip = "open"
        else:
            grip = "hold"
        return Action(float(vec[0]), float(vec[1]), float(vec[2]), grip)


@dataclass
class ObjectState:
    id: int
    category: str
    pose: Pose2
    # (offset in object frame, required-orientation flag); bowls use a rim
    # ring instead, expressed via rim_radius.
    grasp_points: list = field(default_factory=list)
    attached: bool = False
    rim_radius: float = 0.0
    riding_belt: bool = False
    exited: bool = False

    def copy(self) -> "ObjectState":
        return ObjectState(
            self.id, self.category, self.pose, list(self.grasp_points),
            self.attached, self.rim_radius, self.riding_belt, self.exited,
        )


def grasp_candidates(obj: ObjectState, ee: Pose2):
    """Yield (distance to grasp locus, orientation flag, angle error)."""
    if obj.rim_radius > 0.0:
        d = abs(math.hypot(ee.x - obj.pose.x, ee.y - obj.pose.y) - obj.rim_radius)
        yield d, False, 0.0
        return
    for (ox, oy), flagged in obj.grasp_points:
        c, s = math.cos(obj.pose.theta), math.sin(obj.pose.theta)
        gx = obj.pose.x + c * ox - s * oy
        gy = obj.pose.y + s * ox + c * oy
        d = math.hypot(ee.x - gx, ee.y - gy)
        if flagged:
            if obj.category == "pen":
                aerr = abs(pen_angle_diff(ee.theta, obj.pose.theta))
            else:
                aerr = abs(angle_diff(ee.theta, obj.pose.theta))
        else:
            aerr = 0.0
        yield d, flagged, aerr


@dataclass
class WorkspaceState:
    task_id: str
    t: int
    ee: Pose2
    aperture: float
    attached_id: int | None
    objects: list
    lid_angle: float
    belt_speed: float
    # Sticky task-progress flags; see subtask_status.
    flags: dict = field(default_factory=dict)
    # Grasp bookkeeping: offset of the attached object in the EE frame.
    grab_offset: tuple = (0.0, 0.0, 0.0)
    last_grip_t: int = -10
    # Event log consumed by the failure classifier.
    events: list = field(default_factory=list)

    def copy(self) -> "WorkspaceState":
        return WorkspaceState(
            self.task_id, self.t, self.ee, self.aperture, self.attached_id,
            [o.copy() for o in self.objects], self.lid_angle, self.belt_speed,
            dict(self.flags), self.grab_offset, self.last_grip_t,
            list(self.events),
        )

    def obj(self, oid: int) -> ObjectState:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"no object with id {oid}")

    def find(self, category: str) -> ObjectState:
        for o in self.objects:
            if o.category == category:
                return o
        raise KeyError(f"no object of category {category}")


def lid_handle_pos(lid_angle: float) -> tuple:
    return (
        HINGE[0] + LID_RADIUS * math.sin(lid_angle),
        HINGE[1] - LID_RADIUS * math.cos(lid_angle),
    )


def _teacup_flags():
    return {
        "lid_opened": False,
        "cup_grasped": False,
        "cup_placed": False,
        "lid_closed_after_place": False,
    }


def init_task(task_id: str, seed: int, belt_speed: float | None = None) -> WorkspaceState:
    """Build the randomized initial workspace for a task.

    Identical (task_id, seed, belt_speed) always yields an identical state.
    """
    if task_id not in TASKS:
        raise ValueError(f"unknown task id: {task_id!r}")
    if task_id in BELT_TASKS:
        if belt_speed not in BELT_SPEEDS:
            raise ValueError(f"belt task requires belt_speed in {BELT_SPEEDS}")
    elif belt_speed is not None:
        raise ValueError(f"belt_speed given for non-belt task {task_id!r}")

    rng = np.random.default_rng(seed)
    objects = []
    lid_angle = 0.0
    flags: dict = {}

    if task_id == "teacup":
        cx = float(rng.uniform(*CUP_XRANGE))
        cy = float(rng.uniform(*CUP_YRANGE))
        objects.append(ObjectState(0, "cup", Pose2(cx, cy, 0.0),
                                   grasp_points=[((0.0, 0.0), False)]))
        objects.append(ObjectState(1, "box-base", Pose2(*BOX_CENTER, 0.0)))
        hx, hy = lid_handle_pos(0.0)
        objects.append(ObjectState(2, "box-lid", Pose2(hx, hy, 0.0),
                                   grasp_points=[((0.0, 0.0), False)]))
        flags = _teacup_flags()
    elif task_id in BELT_TASKS:
        spawn_x = float(rng.uniform(*BELT_SPAWN_XRANGE))
        bowl = ObjectState(0, "bowl", Pose2(spawn_x, BELT_Y, 0.0),
                           rim_radius=BOWL_RADIUS, riding_belt=True)
        objects.append(bowl)
        if task_id == "belt-spoon":
            theta = wrap_angle(float(rng.uniform(-math.pi, math.pi)))
            objects.append(ObjectState(1, "spoon", Pose2(spawn_x, BELT_Y, theta),
                                       grasp_points=[((0.0, 0.0), True)]))
        flags = {"grasped_before_exit": False, "lifted": False}
    elif task_id == "pens":
        placed: list = []
        while len(placed) < PEN_COUNT:
            px = float(rng.uniform(*PEN_XRANGE))
            py = float(rng.uniform(*PEN_YRANGE))
            if all(math.hypot(px - qx, py - qy) >= PEN_MIN_SPACING for qx, qy in placed):
                placed.append((px, py))
        for i, (px, py) in enumerate(placed):
            theta = wrap_angle(float(rng.uniform(-math.pi, math.pi)))
            objects.append(ObjectState(i, "pen", Pose2(px, py, theta),
                                       grasp_points=[((0.0, 0.0), True)]))
        objects.append(ObjectState(PEN_COUNT, "tray", Pose2(*TRAY_CENTER, 0.0)))
        flags = {f"pen{i}_placed": False for i in range(PEN_COUNT)}

    return WorkspaceState(
        task_id=task_id,
        t=0,
        ee=Pose2(*HOME_POSE),
        aperture=1.0,
        attached_id=None,
        objects=objects,
        lid_angle=lid_angle,
        belt_speed=belt_speed if belt_speed is not None else 0.0,
        flags=flags,
    )


def _attach(state: WorkspaceState, obj: ObjectState) -> None:
    ee = state.ee
    dx, dy = obj.pose.x - ee.x, obj.pose.y - ee.y
    c, s = math.cos(-ee.theta), math.sin(-ee.theta)
    off = (c * dx - s * dy, s * dx + c * dy, angle_diff(obj.pose.theta, ee.theta))
    state.attached_id = obj.id
    state.grab_offset = off
    obj.attached = True
    obj.riding_belt = False


def _process_grip(state: WorkspaceState, grip: str) -> None:
    if grip == "close" and state.aperture > 0.5:
        state.aperture = 0.0
        state.last_grip_t = state.t
        best = None
        angle_miss = False
        for o in state.objects:
            if o.category not in GRASPABLE or o.exited:
                continue
            for d, flagged, aerr in grasp_candidates(o, state.ee):
                if d <= GRASP_POS_TOL:
                    if flagged and aerr > GRASP_ANG_TOL:
                        angle_miss = True
                        continue
                    if best is None or d < best[0]:
                        best = (d, o)
        if best is not None:
            obj = best[1]
            _attach(state, obj)
            state.events.append({
                "kind": "close", "t": state.t, "attached": obj.id,
                "category": obj.category,
                "unintended": obj.category not in INTENDED[state.task_id],
            })
        else:
            state.events.append({
                "kind": "close", "t": state.t, "attached": None,
                "angle_miss": angle_miss,
            })
    elif grip == "open" and state.aperture < 0.5:
        state.aperture = 1.0
        state.last_grip_t = state.t
        if state.attached_id is not None:
            state.obj(state.attached_id).attached = False
            state.attached_id = None
        state.events.append({"kind": "open", "t": state.t})


def step(state: WorkspaceState, action: Action) -> WorkspaceState:
    """Advance the workspace by one 30 Hz tick. Invalid actions are clipped."""
    s = state.copy()
    a = action.clipped()

    nx = min(max(s.ee.x + a.dx, 0.0), 1.0)
    ny = min(max(s.ee.y + a.dy, 0.0), 1.0)
    s.ee = Pose2(nx, ny, s.ee.theta + a.dtheta)

    # Attached object rides the end-effector (lid handle is hinge-constrained).
    if s.attached_id is not None:
        obj = s.obj(s.attached_id)
        if obj.category == "box-lid":
            vx, vy = s.ee.x - HINGE[0], s.ee.y - HINGE[1]
            if math.hypot(vx, vy) > 1e-6:
                bearing = math.atan2(vx, -vy)
                s.lid_angle = min(max(bearing, 0.0), LID_OPEN_ANGLE)
                obj.pose = Pose2(*lid_handle_pos(s.lid_angle), 0.0)
        else:
            ox, oy, oth = s.grab_offset
            c, sn = math.cos(s.ee.theta), math.sin(s.ee.theta)
            obj.pose = Pose2(s.ee.x + c * ox - sn * oy,
                             s.ee.y + sn * ox + c * oy,
                             s.ee.theta + oth)

    # Conveyor advance for riding items; a spoon rides its bowl.
    if s.task_id in BELT_TASKS:
        bowl = s.obj(0)
        if bowl.riding_belt and not bowl.exited:
            bowl.pose = Pose2(bowl.pose.x + s.belt_speed / CONTROL_HZ,
                              bowl.pose.y, bowl.pose.theta)
            if bowl.pose.x > BELT_EXIT_X:
                bowl.exited = True
                s.events.append({"kind": "exit", "t": s.t, "id": 0})
        if s.task_id == "belt-spoon":
            spoon = s.obj(1)
            if not spoon.attached and s.flags.get("_spoon_free") is not True:
                spoon.pose = Pose2(bowl.pose.x, bowl.pose.y, spoon.pose.theta)
                if bowl.exited and not spoon.exited:
                    spoon.exited = True
                    s.events.append({"kind": "exit", "t": s.t, "id": 1})

    was_attached = s.attached_id
    _process_grip(s, a.grip)
    if s.task_id == "belt-spoon" and was_attached == 1 and s.attached_id is None:
        s.flags["_spoon_free"] = True

    _update_flags(s)
    s.t += 1
    return s


def _update_flags(s: WorkspaceState) -> None:
    f = s.flags
    if s.task_id == "teacup":
        if s.lid_angle >= LID_OPEN_ANGLE - LID_OPEN_TOL:
            f["lid_opened"] = True
        if s.attached_id == 0:
            f["cup_grasped"] = True
        cup = s.obj(0)
        inside = (abs(cup.pose.x - BOX_CENTER[0]) <= PLACE_TOL
                  and abs(cup.pose.y - BOX_CENTER[1]) <= PLACE_TOL)
        if (f["cup_grasped"] and inside and s.attached_id != 0
                and s.aperture > 0.5 and f["lid_opened"]):
            f["cup_placed"] = True
        if f["cup_placed"] and s.lid_angle <= LID_CLOSED_TOL:
            f["lid_closed_after_place"] = True
    elif s.task_id in BELT_TASKS:
        target = s.obj(1) if s.task_id == "belt-spoon" else s.obj(0)
        if s.attached_id == target.id and not target.exited:
            f["grasped_before_exit"] = True
        if f["grasped_before_exit"] and abs(target.pose.y - BELT_Y) >= LIFT_CLEARANCE:
            f["lifted"] = True
    elif s.task_id == "pens":
        for i in range(PEN_COUNT):
            pen = s.obj(i)
            inside = (abs(pen.pose.x - TRAY_CENTER[0]) <= PLACE_TOL
                      and abs(pen.pose.y - TRAY_CENTER[1]) <= PLACE_TOL)
            if inside and not pen.attached:
                f[f"pen{i}_placed"] = True


def subtask_status(state: WorkspaceState):
    """Ordered subtask booleans plus the completed count.

    Teacup and belt tasks are sequential (count = leading trues); pens count
    every placed pen.
    """
    f = state.flags
    if state.task_id == "teacup":
        bools = [f["lid_opened"], f["cup_grasped"], f["cup_placed"],
                 f["lid_closed_after_place"]]
    elif state.task_id in BELT_TASKS:
        bools = [f["grasped_before_exit"], f["lifted"]]
    else:
        bools = [f[f"pen{i}_placed"] for i in range(PEN_COUNT)]
        return bools, sum(bools)
    count = 0
    for b in bools:
        if not b:
            break
        count += 1
    return bools, count


def is_success(state: WorkspaceState) -> bool:
    bools, count = subtask_status(state)
    return count == len(bools)


# --- Observation rendering -------------------------------------------------

_cell = (np.arange(GRID_SIZE, dtype=np.float64) + 0.5) / GRID_SIZE
_CY, _CX = np.meshgrid(_cell, _cell, indexing="ij")


def _disc(x, y, r):
    return (_CX - x) ** 2 + (_CY - y) ** 2 <= r * r


def _box(x, y, half):
    return (np.abs(_CX - x) <= half) & (np.abs(_CY - y) <= half)


def _segment(x0, y0, x1, y1, half_width):
    dx, dy = x1 - x0, y1 - y0
    ll = dx * dx + dy * dy
    if ll < 1e-12:
        return _disc(x0, y0, half_width)
    t = ((_CX - x0) * dx + (_CY - y0) * dy) / ll
    t = np.clip(t, 0.0, 1.0)
    px, py = x0 + t * dx, y0 + t * dy
    return (_CX - px) ** 2 + (_CY - py) ** 2 <= half_width * half_width


def _stick_mask(obj: ObjectState, head: bool):
    hx = math.cos(obj.pose.theta) * STICK_LENGTH / 2
    hy = math.sin(obj.pose.theta) * STICK_LENGTH / 2
    m = _segment(obj.pose.x - hx, obj.pose.y - hy,
                 obj.pose.x + hx, obj.pose.y + hy, STICK_HALF_WIDTH)
    if head:
        m = m | _disc(obj.pose.x + hx, obj.pose.y + hy, SPOON_HEAD_RADIUS)
    return m


def rasterize(state: WorkspaceState) -> np.ndarray:
    """Render the semantic 6x32x32 observation grid.

    Channels: 0 end-effector, 1 gripper-closed marker, 2 graspable objects,
    3 containers (box base, tray, bowl), 4 lid footprint, 5 belt region.
    A cell is 1 iff its center lies inside a footprint of that channel.
    """
    grid = np.zeros((GRID_CHANNELS, GRID_SIZE, GRID_SIZE), dtype=np.float32)
    ee_mask = _disc(state.ee.x, state.ee.y, EE_RADIUS)
    grid[0][ee_mask] = 1.0
    if state.aperture < 0.5:
        grid[1][ee_mask] = 1.0
    for o in state.objects:
        if o.exited:
            continue
        if o.category == "cup":
            grid[2][_disc(o.pose.x, o.pose.y, CUP_RADIUS)] = 1.0
        elif o.category == "spoon":
            grid[2][_stick_mask(o, head=True)] = 1.0
        elif o.category == "pen":
            grid[2][_stick_mask(o, head=False)] = 1.0
        elif o.category == "box-base":
            grid[3][_box(o.pose.x, o.pose.y, BOX_HALF)] = 1.0
        elif o.category == "tray":
            grid[3][_box(o.pose.x, o.pose.y, TRAY_HALF)] = 1.0
        elif o.category == "bowl":
            grid[3][_disc(o.pose.x, o.pose.y, BOWL_RADIUS)] = 1.0
        elif o.category == "box-lid":
            hx, hy = lid_handle_pos(state.lid_angle)
            grid[4][_segment(HINGE[0], HINGE[1], hx, hy, 0.02)] = 1.0
    if state.task_id in BELT_TASKS:
        grid[5][np.abs(_CY - BELT_Y) <= BELT_HALF] = 1.0
    return grid


def proprio(state: WorkspaceState) -> np.ndarray:
    """6-vector: x, y, sin(theta), cos(theta), aperture, attached flag."""
    return np.array(
        [state.ee.x, state.ee.y,
         math.sin(state.ee.theta), math.cos(state.ee.theta),
         state.aperture, 1.0 if state.attached_id is not None else 0.0],
        dtype=np.float32,
    )
