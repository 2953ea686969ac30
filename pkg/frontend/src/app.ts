/** Teleoperation console wiring: WebSocket session, input capture,
 * render loop, and episode controls. Single event loop; the network
 * updates the view model and the render loop samples it.
 */

import { CmdScheduler, InputState } from "./input.js";
import {
  begin,
  end,
  hello,
  parseServerMessage,
  proposeStart,
} from "./protocol.js";
import { drawRaster, drawWorkspace } from "./render.js";
import {
  applyMessage,
  initialViewModel,
  startEpisode,
  ViewModel,
} from "./viewmodel.js";

const CANVAS_SIZE = 560;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
};

class Console {
  vm: ViewModel = initialViewModel();
  input = new InputState();
  scheduler = new CmdScheduler();
  ws: WebSocket | null = null;

  private canvas = $<HTMLCanvasElement>("workspace");
  private rasterCanvas = $<HTMLCanvasElement>("raster");
  private banner = $<HTMLDivElement>("banner");
  private statusEl = $<HTMLSpanElement>("status");
  private framesEl = $<HTMLSpanElement>("frames");
  private savedEl = $<HTMLDivElement>("saved");
  private checklist = $<HTMLUListElement>("subtasks");
  private taskSel = $<HTMLSelectElement>("task");
  private modeSel = $<HTMLSelectElement>("mode");
  private spaceInput = $<HTMLInputElement>("space");
  private seedInput = $<HTMLInputElement>("seed");
  private rasterToggle = $<HTMLInputElement>("show-raster");

  connect(): void {
    const url = $<HTMLInputElement>("gateway-url").value;
    this.vm = initialViewModel();
    this.banner.hidden = true;
    const ws = new WebSocket(url);
    this.ws = ws;
    ws.onopen = () => {
      this.vm.status = "handshaking";
      ws.send(JSON.stringify(hello()));
    };
    ws.onmessage = (ev) => {
      try {
        applyMessage(this.vm, parseServerMessage(String(ev.data)));
      } catch (exc) {
        this.vm.error = String(exc);
      }
    };
    ws.onclose = () => {
      if (this.vm.status !== "error") {
        this.vm.status = "closed";
      }
      this.banner.hidden = false;
    };
    ws.onerror = () => {
      this.vm.status = "error";
    };
  }

  send(msg: object): void {
    if (this.ws !== null && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(JSON.stringify(msg));
    }
  }

  begin(): void {
    const task = this.taskSel.value;
    const mode = this.modeSel.value === "hd" ? "hd" : "naive";
    const space = Number(this.spaceInput.value) || 0;
    const seed = Number(this.seedInput.value) || 0;
    startEpisode(this.vm, task, mode, space, seed);
    this.send(begin(task, mode, space, seed));
  }

  tick(nowMs: number): void {
    if (this.vm.inEpisode && this.scheduler.due(nowMs)) {
      const ee = this.vm.state?.ee ?? null;
      const cmd = this.input.nextCmd(ee);
      if (cmd !== null) {
        this.send(cmd);
      }
    }
    this.render();
    requestAnimationFrame((t) => this.tick(t));
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (ctx !== null) {
      drawWorkspace(ctx, CANVAS_SIZE, this.vm.state,
                    this.vm.mode === "hd" ? this.vm.start : null,
                    this.input.target);
    }
    this.rasterCanvas.hidden = !this.rasterToggle.checked;
    if (this.rasterToggle.checked && this.vm.state !== null) {
      const rctx = this.rasterCanvas.getContext("2d");
      if (rctx !== null) {
        drawRaster(rctx, this.rasterCanvas.width, this.vm.state);
      }
    }
    this.statusEl.textContent = this.vm.error !== null
      ? `${this.vm.status}: ${this.vm.error}`
      : this.vm.status + (this.vm.recording ? " · recording" : "");
    this.framesEl.textContent = String(this.vm.frames);
    this.savedEl.textContent = this.vm.savedPath !== null
      ? `saved: ${this.vm.savedPath}`
      : "";
    this.renderChecklist();
  }

  private renderChecklist(): void {
    const bools = this.vm.subtasks;
    while (this.checklist.children.length > bools.length) {
      this.checklist.removeChild(this.checklist.lastChild as Node);
    }
    while (this.checklist.children.length < bools.length) {
      this.checklist.appendChild(document.createElement("li"));
    }
    bools.forEach((done, i) => {
      const li = this.checklist.children[i] as HTMLLIElement;
      li.textContent = `${done ? "☑" : "☐"} subtask ${i + 1}`;
      li.className = done ? "done" : "";
    });
  }

  wire(): void {
    window.addEventListener("keydown", (ev) => {
      if (ev.target instanceof HTMLInputElement ||
          ev.target instanceof HTMLSelectElement) {
        return;
      }
      this.input.keyDown(ev.key);
      if (["ArrowUp", "ArrowDown", "ArrowLeft", "ArrowRight", " "]
          .includes(ev.key)) {
        ev.preventDefault();
      }
    });
    window.addEventListener("keyup", (ev) => this.input.keyUp(ev.key));
    window.addEventListener("blur", () => this.input.clearKeys());

    const toWorkspace = (ev: PointerEvent) => {
      const rect = this.canvas.getBoundingClientRect();
      return {
        x: (ev.clientX - rect.left) / rect.width,
        y: (ev.clientY - rect.top) / rect.height,
      };
    };
    let dragging = false;
    this.canvas.addEventListener("pointerdown", (ev) => {
      dragging = true;
      const p = toWorkspace(ev);
      this.input.setTarget(p.x, p.y);
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (dragging) {
        const p = toWorkspace(ev);
        this.input.setTarget(p.x, p.y);
      }
    });
    window.addEventListener("pointerup", () => {
      dragging = false;
    });

    $("begin").onclick = () => this.begin();
    $("propose").onclick = () => this.send(proposeStart());
    $("commit").onclick = () => this.send(end(true));
    $("discard").onclick = () => this.send(end(false));
    $("retry").onclick = () => this.connect();
  }
}

const app = new Console();
app.wire();
app.connect();
requestAnimationFrame((t) => app.tick(t));
