#!/usr/bin/env python3
"""Watch the scripted expert solve each task, printed as an ASCII strip.

Runs one seeded expert rollout per task and prints the subtask checklist
as it fills in, plus a coarse top-down view every 30 ticks. Everything is
deterministic: run it twice and the frames match.
"""

import numpy as np

from hdlab import expert, sim

CELLS = 24
GLYPHS = {"cup": "c", "bowl": "b", "spoon": "s", "pen": "p",
          "box-base": "B", "box-lid": "L", "tray": "T"}


def draw(state: sim.WorkspaceState) -> str:
    grid = [["." for _ in range(CELLS)] for _ in range(CELLS)]

    def put(x, y, ch):
        col = min(max(int(x * CELLS), 0), CELLS - 1)
        row = min(max(int(y * CELLS), 0), CELLS - 1)
        grid[row][col] = ch

    for obj in state.objects:
        if not obj.exited:
            put(obj.pose.x, obj.pose.y, GLYPHS.get(obj.category, "?"))
    put(state.ee.x, state.ee.y, "E" if state.attached_id is None else "#")
    return "\n".join("".join(row) for row in grid)


def run(task_id: str, seed: int, belt_speed=None) -> None:
    state = sim.init_task(task_id, seed, belt_speed)
    cap = sim.HORIZON_CAPS[task_id]
    print(f"\n=== {task_id} (seed {seed}) ===")
    for t in range(cap):
        if sim.is_success(state):
            break
        if t % 30 == 0:
            bools, done = sim.subtask_status(state)
            ticks = "".join("x" if b else "." for b in bools)
            print(f"\nt={t:4d}  subtasks [{ticks}]")
            print(draw(state))
        state = sim.step(state, expert.expert_action(state))
    bools, done = sim.subtask_status(state)
    print(f"\nfinished at t={state.t}: {done}/{len(bools)} subtasks, "
          f"success={sim.is_success(state)}")


if __name__ == "__main__":
    run("teacup", seed=7)
    run("belt-spoon", seed=3, belt_speed=0.08)
    run("pens", seed=1)
