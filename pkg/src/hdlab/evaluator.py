"""Closed-loop policy evaluation: rollouts, metrics and failure taxonomy.

A rollout queries the policy for a K-step chunk, executes the whole chunk
open-loop, then re-queries, until full task success or the horizon cap.
Evaluation never applies the training-time random masking; an optional
fixed 25% occlusion can be enabled for robustness studies.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import expert as expert_mod
from . import sim
from .policy import PolicyParams, forward

FAILURE_CLASSES = ("CO_GRASP", "ANGLE_MISS", "EMPTY_GRASP", "TRACK_LOSS",
                   "TIMEOUT")

# Fixed evaluation occlusion: a diagonal of 8x8 squares (25% of the area).
_OCCLUDE_PATCH = 8
_OCCLUDE_CELLS = ((0, 0), (1, 1), (2, 2), (3, 3))


def occlude_grid(grid: np.ndarray) -> np.ndarray:
    out = grid.copy()
    p = _OCCLUDE_PATCH
    for r, c in _OCCLUDE_CELLS:
        out[:, r * p:(r + 1) * p, c * p:(c + 1) * p] = 0.0
    return out


@dataclass
class RolloutResult:
    success: bool
    completed: int
    steps_used: int
    failure: str | None
    seed: int
    state_digest: str

    def __post_init__(self):
        if self.success and self.failure is not None:
            raise ValueError("successful rollouts carry no failure class")


class ExpertChunkPolicy:
    """Test adapter exposing the scripted expert through the chunk interface."""

    def __init__(self, chunk_size: int = 32):
        self.chunk_size = chunk_size

    def chunk_actions(self, state: sim.WorkspaceState):
        actions = []
        s = state
        for _ in range(self.chunk_size):
            try:
                a = expert_mod.expert_action(s)
            except expert_mod.ExpertScriptError:
                a = sim.Action(0.0, 0.0, 0.0, "hold")
            actions.append(a)
            s = sim.step(s, a)
        return actions


def _state_digest(state: sim.WorkspaceState) -> str:
    payload = [state.t, round(state.ee.x, 9), round(state.ee.y, 9),
               round(state.ee.theta, 9), state.aperture, state.attached_id,
               round(state.lid_angle, 9)]
    for o in state.objects:
        payload.append([o.id, round(o.pose.x, 9), round(o.pose.y, 9),
                        round(o.pose.theta, 9), o.attached, o.exited])
    return hashlib.sha256(json.dumps(payload).encode()).hexdigest()[:16]


def _policy_chunk(policy, state: sim.WorkspaceState, occlude: bool):
    if isinstance(policy, PolicyParams):
        grid = sim.rasterize(state)
        if occlude:
            grid = occlude_grid(grid)
        chunk = forward(policy, grid, sim.proprio(state))
        return [sim.Action.decode(row) for row in chunk]
    return policy.chunk_actions(state)


def rollout(policy, task_id: str, seed: int,
            belt_speed: float | None = None,
            occlude: bool = False) -> RolloutResult:
    """One deterministic closed-loop evaluation episode."""
    state = sim.init_task(task_id, seed, belt_speed)
    cap = sim.HORIZON_CAPS[task_id]
    steps = 0
    while steps < cap and not sim.is_success(state):
        for action in _policy_chunk(policy, state, occlude):
            state = sim.step(state, action)
            steps += 1
            if steps >= cap or sim.is_success(state):
                break
    success = sim.is_success(state)
    _, completed = sim.subtask_status(state)
    failure = None if success else classify_failure(state)
    return RolloutResult(success, completed, steps, failure, seed,
                         _state_digest(state))


def classify_failure(state: sim.WorkspaceState) -> str:
    """Assign exactly one failure class to a failed rollout.

    Rule priority: unintended attachment, then an orientation miss at a
    flagged grasp point, then an empty-handed close, then losing a belt
    target, then timeout.
    """
    if sim.is_success(state):
        raise ValueError("classify_failure called on a successful rollout")
    events = state.events
    closes = [e for e in events if e["kind"] == "close"]
    if any(e.get("unintended") for e in closes):
        return "CO_GRASP"
    if any(e["attached"] is None and e.get("angle_miss") for e in closes):
        return "ANGLE_MISS"
    if any(e["attached"] is None and not e.get("angle_miss") for e in closes):
        return "EMPTY_GRASP"
    if state.task_id in sim.BELT_TASKS:
        target_id = 1 if state.task_id == "belt-spoon" else 0
        first_close = min((e["t"] for e in closes), default=None)
        for e in events:
            if e["kind"] == "exit" and e["id"] == target_id:
                if first_close is None or e["t"] < first_close:
                    return "TRACK_LOSS"
    return "TIMEOUT"


@dataclass
class Metrics:
    n: int
    success_rate: float
    mean_completed: float
    failures: dict
    mean_steps: float

    def to_json(self) -> dict:
        return {"n": self.n, "sr": self.success_rate,
                "mean_completed": self.mean_completed,
                "failures": dict(sorted(self.failures.items())),
                "mean_steps": self.mean_steps}

    @staticmethod
    def from_json(d: dict) -> "Metrics":
        return Metrics(d["n"], d["sr"], d["mean_completed"],
                       dict(d["failures"]), d["mean_steps"])


def aggregate(results) -> Metrics:
    """Fold rollout results (in seed order) into Metrics."""
    n = len(results)
    if n < 1:
        raise ValueError("need at least one rollout result")
    failures: dict = {}
    for r in results:
        if not r.success:
            failures[r.failure] = failures.get(r.failure, 0) + 1
    return Metrics(
        n=n,
        success_rate=sum(r.success for r in results) / n,
        mean_completed=sum(r.completed for r in results) / n,
        failures=failures,
        mean_steps=sum(r.steps_used for r in results) / n,
    )


def evaluate(policy, task_id: str, n: int, seed: int,
             belt_speed: float | None = None,
             occlude: bool = False) -> Metrics:
    """Aggregate n rollouts on consecutive seeds seed..seed+n-1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return aggregate([rollout(policy, task_id, seed + i, belt_speed, occlude)
                      for i in range(n)])


def compare_report(entries) -> tuple:
    """Render labeled metrics as (markdown, csv) tables with deltas vs the
    first label.

    entries: list of dicts with keys label, metrics (Metrics json dict) and
    optionally mean_frames.
    """
    if not entries:
        raise ValueError("compare_report needs at least one entry")
    for e in entries:
        if "label" not in e or "metrics" not in e:
            raise ValueError("malformed report entry; need label and metrics")
    base = entries[0]["metrics"]
    with_delta = len(entries) > 1
    headers = ["label", "sr", "mean_completed", "mean_steps", "mean_frames"]
    if with_delta:
        headers += ["delta_sr", "delta_completed"]
    rows = []
    for e in entries:
        m = e["metrics"]
        row = [e["label"], f"{m['sr']:.3f}", f"{m['mean_completed']:.3f}",
               f"{m['mean_steps']:.1f}",
               "" if e.get("mean_frames") is None else f"{e['mean_frames']:.1f}"]
        if with_delta:
            row += [f"{m['sr'] - base['sr']:+.3f}",
                    f"{m['mean_completed'] - base['mean_completed']:+.3f}"]
        rows.append(row)
    md_lines = ["| " + " | ".join(headers) + " |",
                "| " + " | ".join("---" for _ in headers) + " |"]
    md_lines += ["| " + " | ".join(r) + " |" for r in rows]
    csv_lines = [",".join(headers)] + [",".join(r) for r in rows]
    return "\n".join(md_lines) + "\n", "\n".join(csv_lines) + "\n"
