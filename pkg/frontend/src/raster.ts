/** Client-side port of the simulator's semantic raster, for the debug
 * overlay: 6 channels x 32 x 32, cell = 1 iff its center lies inside a
 * footprint. Channels: 0 end-effector, 1 gripper-closed marker,
 * 2 graspable objects, 3 containers, 4 lid footprint, 5 belt region.
 */

import type { StateMessage } from "./protocol.js";

export const GRID_SIZE = 32;
export const GRID_CHANNELS = 6;

const EE_RADIUS = 0.025;
const CUP_RADIUS = 0.05;
const BOWL_RADIUS = 0.05;
const SPOON_HEAD_RADIUS = 0.02;
const STICK_LENGTH = 0.1;
const STICK_HALF_WIDTH = 0.012;
const BOX_HALF = 0.08;
const TRAY_HALF = 0.07;
const HINGE: [number, number] = [0.72, 0.43];
const LID_RADIUS = 0.16;
const LID_HALF_WIDTH = 0.02;
const BELT_Y = 0.5;
const BELT_HALF = 0.05;
const BELT_TASKS = ["belt-bowl", "belt-spoon"];

function cellCenter(i: number): number {
  return (i + 0.5) / GRID_SIZE;
}

export function lidHandlePos(lidAngle: number): [number, number] {
  return [
    HINGE[0] + LID_RADIUS * Math.sin(lidAngle),
    HINGE[1] - LID_RADIUS * Math.cos(lidAngle),
  ];
}

type Footprint = (cx: number, cy: number) => boolean;

function disc(x: number, y: number, r: number): Footprint {
  return (cx, cy) => (cx - x) ** 2 + (cy - y) ** 2 <= r * r;
}

function box(x: number, y: number, half: number): Footprint {
  return (cx, cy) => Math.abs(cx - x) <= half && Math.abs(cy - y) <= half;
}

function segment(x0: number, y0: number, x1: number, y1: number,
                 halfWidth: number): Footprint {
  const dx = x1 - x0;
  const dy = y1 - y0;
  const ll = dx * dx + dy * dy;
  if (ll < 1e-12) {
    return disc(x0, y0, halfWidth);
  }
  return (cx, cy) => {
    let t = ((cx - x0) * dx + (cy - y0) * dy) / ll;
    t = Math.min(Math.max(t, 0), 1);
    const px = x0 + t * dx;
    const py = y0 + t * dy;
    return (cx - px) ** 2 + (cy - py) ** 2 <= halfWidth * halfWidth;
  };
}

function stick(x: number, y: number, theta: number,
               head: boolean): Footprint {
  const hx = Math.cos(theta) * STICK_LENGTH / 2;
  const hy = Math.sin(theta) * STICK_LENGTH / 2;
  const body = segment(x - hx, y - hy, x + hx, y + hy, STICK_HALF_WIDTH);
  if (!head) {
    return body;
  }
  const tip = disc(x + hx, y + hy, SPOON_HEAD_RADIUS);
  return (cx, cy) => body(cx, cy) || tip(cx, cy);
}

function paint(grid: Uint8Array, channel: number, fp: Footprint): void {
  const base = channel * GRID_SIZE * GRID_SIZE;
  for (let row = 0; row < GRID_SIZE; row++) {
    const cy = cellCenter(row);
    for (let col = 0; col < GRID_SIZE; col++) {
      if (fp(cellCenter(col), cy)) {
        grid[base + row * GRID_SIZE + col] = 1;
      }
    }
  }
}

/** Render the 6x32x32 grid as a flat Uint8Array (channel-major). */
export function rasterize(state: StateMessage): Uint8Array {
  const grid = new Uint8Array(GRID_CHANNELS * GRID_SIZE * GRID_SIZE);
  const ee = disc(state.ee.x, state.ee.y, EE_RADIUS);
  paint(grid, 0, ee);
  if (state.aperture < 0.5) {
    paint(grid, 1, ee);
  }
  for (const o of state.objects) {
    if (o.exited) {
      continue;
    }
    switch (o.category) {
      case "cup":
        paint(grid, 2, disc(o.x, o.y, CUP_RADIUS));
        break;
      case "spoon":
        paint(grid, 2, stick(o.x, o.y, o.theta, true));
        break;
      case "pen":
        paint(grid, 2, stick(o.x, o.y, o.theta, false));
        break;
      case "box-base":
        paint(grid, 3, box(o.x, o.y, BOX_HALF));
        break;
      case "tray":
        paint(grid, 3, box(o.x, o.y, TRAY_HALF));
        break;
      case "bowl":
        paint(grid, 3, disc(o.x, o.y, BOWL_RADIUS));
        break;
      case "box-lid": {
        const [hx, hy] = lidHandlePos(state.lid_angle);
        paint(grid, 4, segment(HINGE[0], HINGE[1], hx, hy, LID_HALF_WIDTH));
        break;
      }
    }
  }
  if (BELT_TASKS.includes(state.task)) {
    paint(grid, 5, (_cx, cy) => Math.abs(cy - BELT_Y) <= BELT_HALF);
  }
  return grid;
}
