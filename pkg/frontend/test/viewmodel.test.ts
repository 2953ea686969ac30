import { describe, expect, it } from "vitest";

import { parseServerMessage, StateMessage } from "../src/protocol.js";
import {
  applyMessage,
  initialViewModel,
  startEpisode,
} from "../src/viewmodel.js";

function state(t: number, frames: number): StateMessage {
  return {
    kind: "state",
    t,
    ee: { x: 0.5, y: 0.5, theta: 0 },
    aperture: 1,
    attached: null,
    objects: [],
    subtasks: [false, true],
    completed: 1,
    frames,
    lid_angle: 0,
    belt_speed: 0,
    task: "teacup",
    success: false,
    recording: true,
    seq: null,
  };
}

describe("view model", () => {
  it("keeps only the latest state and drops stale frames", () => {
    const vm = initialViewModel();
    applyMessage(vm, state(10, 10));
    applyMessage(vm, state(8, 8)); // stale: lower tick
    expect(vm.state!.t).toBe(10);
    expect(vm.dropped).toBe(1);
    applyMessage(vm, state(11, 11));
    expect(vm.state!.t).toBe(11);
  });

  it("mirrors the gateway frame counter and checklist", () => {
    const vm = initialViewModel();
    applyMessage(vm, state(3, 2));
    expect(vm.frames).toBe(2);
    expect(vm.subtasks).toEqual([false, true]);
    expect(vm.recording).toBe(true);
  });

  it("tracks the session lifecycle", () => {
    const vm = initialViewModel();
    applyMessage(vm, { kind: "hello", proto: 1 });
    expect(vm.status).toBe("open");
    startEpisode(vm, "teacup", "hd", 2, 7);
    expect(vm.inEpisode).toBe(true);
    applyMessage(vm, {
      kind: "start",
      pose: { x: 0.2, y: 0.4, theta: -1.5 },
      region: { x: 0.2, y: 0.4, theta: -1.5, half_width: 0.12,
                theta_half_range: 0.5 },
    });
    expect(vm.start!.region.half_width).toBeCloseTo(0.12, 10);
    applyMessage(vm, { kind: "saved", path: "/tmp/out/ep.hdse" });
    expect(vm.savedPath).toBe("/tmp/out/ep.hdse");
    expect(vm.inEpisode).toBe(false);
  });

  it("surfaces protocol errors verbatim", () => {
    const vm = initialViewModel();
    applyMessage(vm, { kind: "error", message: "expected hello, got 'cmd'" });
    expect(vm.error).toBe("expected hello, got 'cmd'");
    expect(vm.status).toBe("error");
  });
});

describe("message parsing", () => {
  it("accepts well-formed JSON with a kind", () => {
    const msg = parseServerMessage('{"kind":"discarded"}');
    expect(msg.kind).toBe("discarded");
  });

  it("rejects junk", () => {
    expect(() => parseServerMessage("nope")).toThrow(/not JSON/);
    expect(() => parseServerMessage('{"no":"kind"}')).toThrow(/kind/);
  });
});
