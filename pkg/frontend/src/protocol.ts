/** Wire types for the gateway's SessionMessage protocol (proto 1).
 *
 * One JSON object per message; over WebSocket each frame carries exactly
 * one object, byte-identical to the line-delimited TCP form.
 */

export const PROTO_VERSION = 1;

/** Per-tick motion limits, mirrored from the simulator's clipping rule. */
export const STEP_POS_LIMIT = 0.02;
export const STEP_ROT_LIMIT = 0.15;
/** State stream / command budget, frames per second. */
export const TICK_HZ = 30;

export type Grip = "open" | "hold" | "close";

export interface PoseJson {
  x: number;
  y: number;
  theta: number;
}

export interface ObjectJson {
  id: number;
  category: string;
  x: number;
  y: number;
  theta: number;
  attached: boolean;
  exited: boolean;
}

export interface StateMessage {
  kind: "state";
  t: number;
  ee: PoseJson;
  aperture: number;
  attached: number | null;
  objects: ObjectJson[];
  subtasks: boolean[];
  completed: number;
  frames: number;
  lid_angle: number;
  belt_speed: number;
  task: string;
  success: boolean;
  recording: boolean;
  /** Client-assigned seq of the most recently applied cmd, if any. */
  seq?: number | null;
}

export interface StartMessage {
  kind: "start";
  pose: PoseJson;
  region: {
    x: number;
    y: number;
    theta: number;
    half_width: number;
    theta_half_range: number;
  };
}

export interface HelloMessage {
  kind: "hello";
  proto: number;
}

export interface SavedMessage {
  kind: "saved";
  path: string;
}

export interface DiscardedMessage {
  kind: "discarded";
}

export interface ErrorMessage {
  kind: "error";
  message: string;
}

export type ServerMessage =
  | HelloMessage
  | StartMessage
  | StateMessage
  | SavedMessage
  | DiscardedMessage
  | ErrorMessage;

export interface CmdMessage {
  kind: "cmd";
  dx: number;
  dy: number;
  dth: number;
  grip: Grip;
  seq: number;
}

export function hello(): HelloMessage {
  return { kind: "hello", proto: PROTO_VERSION };
}

export function begin(task: string, mode: "naive" | "hd", space: number,
                      seed: number): Record<string, unknown> {
  const msg: Record<string, unknown> = { kind: "begin", task, mode, seed };
  if (mode === "hd") {
    msg.space = space;
  }
  return msg;
}

export function proposeStart(): Record<string, unknown> {
  return { kind: "propose_start" };
}

export function end(commit: boolean): Record<string, unknown> {
  return { kind: "end", commit };
}

export function parseServerMessage(text: string): ServerMessage {
  let value: unknown;
  try {
    value = JSON.parse(text);
  } catch {
    throw new Error(`not JSON: ${text.slice(0, 80)}`);
  }
  if (typeof value !== "object" || value === null ||
      typeof (value as { kind?: unknown }).kind !== "string") {
    throw new Error("message lacks a string 'kind'");
  }
  return value as ServerMessage;
}
