/** The single mutable surface between the network and the render loop.
 *
 * Network receipt folds messages into the view model; the render loop
 * samples it. Only the latest state is kept — a state whose tick is
 * older than the one already held is dropped.
 */

import type {
  ServerMessage,
  StartMessage,
  StateMessage,
} from "./protocol.js";

export type ConnectionStatus =
  | "connecting"
  | "handshaking"
  | "open"
  | "closed"
  | "error";

export interface ViewModel {
  status: ConnectionStatus;
  /** Latest state message; stale frames are dropped. */
  state: StateMessage | null;
  /** Start pose / region overlay, present after begin(mode=hd). */
  start: StartMessage | null;
  task: string;
  mode: "naive" | "hd";
  space: number;
  seed: number;
  recording: boolean;
  /** Frame counter as reported by the gateway. */
  frames: number;
  subtasks: boolean[];
  /** Path of the last committed episode, if any. */
  savedPath: string | null;
  /** Last error text (protocol errors surfaced verbatim). */
  error: string | null;
  /** True between begin and end. */
  inEpisode: boolean;
  dropped: number;
}

export function initialViewModel(): ViewModel {
  return {
    status: "connecting",
    state: null,
    start: null,
    task: "teacup",
    mode: "naive",
    space: 0,
    seed: 0,
    recording: false,
    frames: 0,
    subtasks: [],
    savedPath: null,
    error: null,
    inEpisode: false,
    dropped: 0,
  };
}

/** Fold one server message into the view model (mutates in place). */
export function applyMessage(vm: ViewModel, msg: ServerMessage): void {
  switch (msg.kind) {
    case "hello":
      vm.status = "open";
      break;
    case "start":
      vm.start = msg;
      break;
    case "state":
      if (vm.state !== null && msg.t < vm.state.t) {
        vm.dropped += 1;
        return;
      }
      vm.state = msg;
      vm.frames = msg.frames;
      vm.recording = msg.recording;
      vm.subtasks = msg.subtasks;
      break;
    case "saved":
      vm.savedPath = msg.path;
      vm.inEpisode = false;
      break;
    case "discarded":
      vm.inEpisode = false;
      break;
    case "error":
      vm.error = msg.message;
      vm.status = "error";
      break;
  }
}

/** Reset per-episode fields when a new begin is sent. */
export function startEpisode(vm: ViewModel, task: string,
                             mode: "naive" | "hd", space: number,
                             seed: number): void {
  vm.task = task;
  vm.mode = mode;
  vm.space = space;
  vm.seed = seed;
  vm.start = null;
  vm.state = null;
  vm.savedPath = null;
  vm.error = null;
  vm.inEpisode = true;
  vm.frames = 0;
  vm.subtasks = [];
  vm.dropped = 0;
}
