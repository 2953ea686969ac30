import { describe, expect, it } from "vitest";

import beltFixture from "./raster_fixture_belt.json";
import teacupFixture from "./raster_fixture.json";
import type { StateMessage } from "../src/protocol.js";
import { GRID_CHANNELS, GRID_SIZE, rasterize } from "../src/raster.js";

interface Fixture {
  state: StateMessage;
  grid: number[][];
}

function checkAgainst(fix: Fixture): void {
  const got = rasterize(fix.state);
  for (let c = 0; c < GRID_CHANNELS; c++) {
    const want = fix.grid[c];
    for (let i = 0; i < GRID_SIZE * GRID_SIZE; i++) {
      if (got[c * GRID_SIZE * GRID_SIZE + i] !== want[i]) {
        const row = Math.floor(i / GRID_SIZE);
        const col = i % GRID_SIZE;
        throw new Error(
          `channel ${c} cell (${row},${col}): got ` +
          `${got[c * GRID_SIZE * GRID_SIZE + i]}, want ${want[i]}`);
      }
    }
  }
}

describe("raster debug view", () => {
  it("matches the simulator raster on a teacup state (fixture)", () => {
    checkAgainst(teacupFixture as Fixture);
  });

  it("matches the simulator raster on a belt state (fixture)", () => {
    checkAgainst(beltFixture as Fixture);
  });

  it("marks the gripper-closed channel only when closed", () => {
    const fix = teacupFixture as Fixture;
    const open: StateMessage = { ...fix.state, aperture: 1 };
    const grid = rasterize(open);
    const ch1 = grid.slice(GRID_SIZE * GRID_SIZE, 2 * GRID_SIZE * GRID_SIZE);
    expect(ch1.every((v) => v === 0)).toBe(true);
  });
});
