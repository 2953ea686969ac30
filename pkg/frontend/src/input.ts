/** Keyboard/pointer state -> per-tick cmd messages.
 *
 * Keyboard is the primary input: held keys map to full per-step
 * magnitudes (reproducible step sizes). Pointer drag is assistive: it
 * sets a workspace target the client walks toward one clipped step per
 * tick. Commands are emitted on a fixed schedule capped at TICK_HZ.
 */

import {
  CmdMessage,
  Grip,
  STEP_POS_LIMIT,
  STEP_ROT_LIMIT,
  TICK_HZ,
} from "./protocol.js";

export class InputState {
  private held = new Set<string>();
  /** Desired gripper state; space toggles it. */
  gripClosed = false;
  /** Pending one-shot grip transition to send with the next cmd. */
  private pendingGrip: Grip | null = null;
  /** Pointer target in workspace coordinates, if dragging/clicked. */
  target: { x: number; y: number } | null = null;
  private seq = 0;

  keyDown(key: string): void {
    const k = key.length === 1 ? key.toLowerCase() : key;
    if (k === " " || k === "Space") {
      this.gripClosed = !this.gripClosed;
      this.pendingGrip = this.gripClosed ? "close" : "open";
      return;
    }
    this.held.add(k);
  }

  keyUp(key: string): void {
    const k = key.length === 1 ? key.toLowerCase() : key;
    this.held.delete(k);
  }

  clearKeys(): void {
    this.held.clear();
  }

  setTarget(x: number, y: number): void {
    this.target = { x, y };
  }

  clearTarget(): void {
    this.target = null;
  }

  private axis(neg: string[], pos: string[]): number {
    let v = 0;
    if (neg.some((k) => this.held.has(k))) v -= 1;
    if (pos.some((k) => this.held.has(k))) v += 1;
    return v;
  }

  /** Build the next cmd, or null when there is nothing to say.
   *
   * `ee` is the latest end-effector pose, needed to step toward a
   * pointer target. Screen-up is negative workspace y, so W/ArrowUp map
   * to dy = -STEP_POS_LIMIT.
   */
  nextCmd(ee: { x: number; y: number } | null): CmdMessage | null {
    let dx = this.axis(["a", "ArrowLeft"], ["d", "ArrowRight"])
      * STEP_POS_LIMIT;
    let dy = this.axis(["w", "ArrowUp"], ["s", "ArrowDown"])
      * STEP_POS_LIMIT;
    const dth = this.axis(["q"], ["e"]) * STEP_ROT_LIMIT;

    const keysActive = dx !== 0 || dy !== 0;
    if (!keysActive && this.target !== null && ee !== null) {
      const tx = this.target.x - ee.x;
      const ty = this.target.y - ee.y;
      const dist = Math.hypot(tx, ty);
      if (dist < STEP_POS_LIMIT / 4) {
        this.target = null;
      } else {
        const s = Math.min(1, STEP_POS_LIMIT / dist);
        dx = tx * s;
        dy = ty * s;
      }
    }

    const grip: Grip = this.pendingGrip ?? "hold";
    if (dx === 0 && dy === 0 && dth === 0 && grip === "hold") {
      return null;
    }
    this.pendingGrip = null;
    this.seq += 1;
    return { kind: "cmd", dx, dy, dth, grip, seq: this.seq };
  }
}

/** Fixed-rate schedule: due() fires at most `hz` times per second. */
export class CmdScheduler {
  private readonly intervalMs: number;
  private nextAt: number | null = null;

  constructor(hz: number = TICK_HZ) {
    this.intervalMs = 1000 / hz;
  }

  due(nowMs: number): boolean {
    if (this.nextAt === null) {
      this.nextAt = nowMs + this.intervalMs;
      return true;
    }
    if (nowMs < this.nextAt) {
      return false;
    }
    // advance on the absolute schedule; skip whole missed slots rather
    // than bursting to catch up
    while (this.nextAt <= nowMs) {
      this.nextAt += this.intervalMs;
    }
    return true;
  }
}
