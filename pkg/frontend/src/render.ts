/** Immediate-mode canvas rendering of the semantic workspace state.
 *
 * Draws object geometry (not the policy's raster); the raster is
 * available as a separate debug view. Workspace coordinates are the
 * unit square with y increasing downward on screen, matching the
 * keyboard convention (W / screen-up = negative dy).
 */

import type { StartMessage, StateMessage } from "./protocol.js";
import { GRID_CHANNELS, GRID_SIZE, lidHandlePos, rasterize } from "./raster.js";

const COLORS: Record<string, string> = {
  cup: "#d9822b",
  spoon: "#7a5fbf",
  pen: "#2b7dd9",
  bowl: "#3aa357",
  "box-base": "#8a6d4a",
  "box-lid": "#c2a177",
  tray: "#5a7d8a",
};

const HINGE: [number, number] = [0.72, 0.43];

export function drawWorkspace(ctx: CanvasRenderingContext2D, size: number,
                              state: StateMessage | null,
                              start: StartMessage | null,
                              target: { x: number; y: number } | null): void {
  const px = (v: number) => v * size;
  ctx.clearRect(0, 0, size, size);
  ctx.fillStyle = "#fafaf5";
  ctx.fillRect(0, 0, size, size);

  if (state === null) {
    ctx.fillStyle = "#999";
    ctx.font = "14px sans-serif";
    ctx.fillText("no state yet — press Begin", size / 2 - 90, size / 2);
    return;
  }

  if (state.task.startsWith("belt")) {
    ctx.fillStyle = "#e8e8e0";
    ctx.fillRect(0, px(0.45), size, px(0.1));
  }

  if (start !== null) {
    const r = start.region;
    ctx.strokeStyle = "#2b7dd9";
    ctx.setLineDash([6, 4]);
    ctx.lineWidth = 1.5;
    ctx.strokeRect(px(r.x - r.half_width), px(r.y - r.half_width),
                   px(2 * r.half_width), px(2 * r.half_width));
    ctx.setLineDash([]);
    drawPose(ctx, size, start.pose.x, start.pose.y, start.pose.theta,
             "#2b7dd9");
  }

  for (const o of state.objects) {
    if (o.exited) {
      continue;
    }
    ctx.fillStyle = COLORS[o.category] ?? "#666";
    ctx.strokeStyle = ctx.fillStyle;
    switch (o.category) {
      case "cup":
        circle(ctx, px(o.x), px(o.y), px(0.03), true);
        break;
      case "bowl":
        circle(ctx, px(o.x), px(o.y), px(0.05), false);
        break;
      case "spoon":
      case "pen":
        stickShape(ctx, size, o.x, o.y, o.theta, o.category === "spoon");
        break;
      case "box-base":
        ctx.strokeRect(px(o.x - 0.08), px(o.y - 0.08), px(0.16), px(0.16));
        break;
      case "tray":
        ctx.strokeRect(px(o.x - 0.07), px(o.y - 0.07), px(0.14), px(0.14));
        break;
      case "box-lid": {
        const [hx, hy] = lidHandlePos(state.lid_angle);
        ctx.lineWidth = 4;
        line(ctx, px(HINGE[0]), px(HINGE[1]), px(hx), px(hy));
        ctx.lineWidth = 1;
        break;
      }
    }
  }

  if (target !== null) {
    ctx.strokeStyle = "#c2443a";
    line(ctx, px(target.x) - 5, px(target.y), px(target.x) + 5, px(target.y));
    line(ctx, px(target.x), px(target.y) - 5, px(target.x), px(target.y) + 5);
  }

  const closed = state.aperture < 0.5;
  drawPose(ctx, size, state.ee.x, state.ee.y, state.ee.theta,
           closed ? "#c2443a" : "#222", closed);
}

function circle(ctx: CanvasRenderingContext2D, x: number, y: number,
                r: number, fill: boolean): void {
  ctx.beginPath();
  ctx.arc(x, y, r, 0, 2 * Math.PI);
  if (fill) {
    ctx.fill();
  } else {
    ctx.stroke();
  }
}

function line(ctx: CanvasRenderingContext2D, x0: number, y0: number,
              x1: number, y1: number): void {
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y1);
  ctx.stroke();
}

function stickShape(ctx: CanvasRenderingContext2D, size: number, x: number,
                    y: number, theta: number, head: boolean): void {
  const px = (v: number) => v * size;
  const hx = Math.cos(theta) * 0.05;
  const hy = Math.sin(theta) * 0.05;
  ctx.lineWidth = 3;
  line(ctx, px(x - hx), px(y - hy), px(x + hx), px(y + hy));
  ctx.lineWidth = 1;
  if (head) {
    circle(ctx, px(x + hx), px(y + hy), px(0.02), true);
  }
}

function drawPose(ctx: CanvasRenderingContext2D, size: number, x: number,
                  y: number, theta: number, color: string,
                  filled = false): void {
  const px = (v: number) => v * size;
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  circle(ctx, px(x), px(y), px(0.025), filled);
  if (!filled) {
    circle(ctx, px(x), px(y), px(0.025), false);
  }
  line(ctx, px(x), px(y),
       px(x + 0.04 * Math.cos(theta)), px(y + 0.04 * Math.sin(theta)));
}

/** Draw the 6 raster channels side by side (debug view). */
export function drawRaster(ctx: CanvasRenderingContext2D, width: number,
                           state: StateMessage): void {
  const grid = rasterize(state);
  const cell = Math.floor(width / (GRID_CHANNELS * (GRID_SIZE + 2)));
  const tile = cell * GRID_SIZE;
  ctx.clearRect(0, 0, width, tile + 16);
  for (let c = 0; c < GRID_CHANNELS; c++) {
    const x0 = c * (tile + 2 * cell);
    ctx.strokeStyle = "#bbb";
    ctx.strokeRect(x0, 0, tile, tile);
    ctx.fillStyle = "#222";
    const base = c * GRID_SIZE * GRID_SIZE;
    for (let row = 0; row < GRID_SIZE; row++) {
      for (let col = 0; col < GRID_SIZE; col++) {
        if (grid[base + row * GRID_SIZE + col]) {
          ctx.fillRect(x0 + col * cell, row * cell, cell, cell);
        }
      }
    }
    ctx.fillStyle = "#777";
    ctx.font = "10px sans-serif";
    ctx.fillText(`ch${c}`, x0, tile + 12);
  }
}
