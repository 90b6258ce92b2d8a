/**
 * Console wiring: WebSocket session, tick-driven teleoperation, HUD, sector
 * picker, recording and replay. Every rendered value traces back to a server
 * message; the console fabricates nothing.
 */

import { LatestFrameBuffer } from "./frameBuffer.js";
import { emptyHud, formatHudLine, hudFromBundle, type HudModel } from "./hud.js";
import { KeyState, actionFromKeys, isZeroAction, type Bounds } from "./input.js";
import {
  checkHello, decodeTickBundle, PROTOCOL_VERSION,
  type Hello, type ServerText, type TickBundle,
} from "./protocol.js";
import { CameraView, renderBundle } from "./render2d.js";
import { ReplayBuffer, ReplayCursor, exportReplay, importReplay } from "./replay.js";
import { saveBlockReason } from "./saveGuard.js";
import { sectorFromCanvasPoint } from "./sectors.js";
import { newAudit, recordTick, isGapless } from "./tickAudit.js";

type Mode = "live" | "replay";

class Console {
  private ws: WebSocket | null = null;
  private hello: Hello | null = null;
  private bounds: Bounds = { translation_mm: 0.1, rotation_rad: 0.035 };
  private keys = new KeyState();
  private buffer = new LatestFrameBuffer();
  private recording = new ReplayBuffer();
  private cursor = new ReplayCursor(this.recording);
  private audit = newAudit();
  private hud: HudModel = emptyHud();
  private views: CameraView[] = [];
  private mode: Mode = "live";
  private targetSector: string | null = null;
  private episodeOutcome: string | null = null;
  private reconnectDelay = 1000;

  private el<T extends HTMLElement>(id: string): T {
    return document.getElementById(id) as T;
  }

  start(): void {
    this.views = ["cam-top", "cam-side", "cam-corner"].map(
      (id) => new CameraView(this.el<HTMLCanvasElement>(id)),
    );
    document.addEventListener("keydown", (e) => {
      if ((e.target as HTMLElement).tagName === "INPUT") return;
      this.keys.keyDown(e.code, e.shiftKey);
      e.preventDefault();
    });
    document.addEventListener("keyup", (e) => this.keys.keyUp(e.code, e.shiftKey));
    this.el("btn-connect").onclick = () => this.connect();
    this.el("btn-start").onclick = () => this.control({ op: "start" });
    this.el("btn-reset").onclick = () => this.control({ op: "reset" });
    this.el("btn-abort").onclick = () => this.control({ op: "abort" });
    this.el("btn-save").onclick = () => this.save();
    this.el("btn-replay").onclick = () => this.enterReplay();
    this.el("btn-live").onclick = () => { this.mode = "live"; };
    this.el("btn-export").onclick = () => this.exportRecording();
    this.el<HTMLInputElement>("replay-file").onchange = (e) => this.importRecording(e);
    const scrubber = this.el<HTMLInputElement>("scrubber");
    scrubber.oninput = () => {
      const b = this.cursor.seekFraction(Number(scrubber.value) / 1000);
      if (b) this.renderReplayFrame(b);
    };
    const top = this.el<HTMLCanvasElement>("cam-top");
    top.onclick = (e) => {
      const rect = top.getBoundingClientRect();
      this.targetSector = sectorFromCanvasPoint(
        (e.clientX - rect.left) * (top.width / rect.width),
        (e.clientY - rect.top) * (top.height / rect.height),
        top.width / 2, top.height / 2,
      );
      this.el("target-sector").textContent = this.targetSector;
    };
    requestAnimationFrame(() => this.renderLoop());
    this.connect();
  }

  private banner(text: string | null, cssClass = "error"): void {
    const el = this.el("banner");
    el.textContent = text ?? "";
    el.className = text ? `banner ${cssClass}` : "banner hidden";
  }

  private connect(): void {
    const address = this.el<HTMLInputElement>("server-address").value;
    this.setStatus("connecting");
    const ws = new WebSocket(address);
    ws.binaryType = "arraybuffer";
    this.ws = ws;
    ws.onmessage = (ev) => this.onMessage(ev);
    ws.onclose = () => {
      this.setStatus("disconnected");
      if (this.hud.connection !== "incompatible") {
        setTimeout(() => this.connect(), this.reconnectDelay);
        this.reconnectDelay = Math.min(this.reconnectDelay * 2, 15000);
      }
    };
  }

  private onMessage(ev: MessageEvent): void {
    if (ev.data instanceof ArrayBuffer) {
      const bundle = decodeTickBundle(ev.data);
      recordTick(this.audit, bundle.tick);
      this.buffer.push(bundle);
      this.recording.record(bundle);
      // tick-driven teleoperation: at most one action per received tick
      const action = actionFromKeys(this.keys, this.bounds);
      if (this.ws?.readyState === WebSocket.OPEN && !isZeroAction(action)) {
        this.ws.send(JSON.stringify({ type: "action", tick: bundle.tick + 1, delta: action }));
      }
      return;
    }
    const msg = JSON.parse(ev.data) as ServerText;
    switch (msg.type) {
      case "hello": {
        const problem = checkHello(msg);
        if (problem) {
          this.hud.connection = "incompatible";
          this.banner(problem);
          this.ws?.close();
          return;
        }
        this.hello = msg;
        this.bounds = msg.bounds;
        this.reconnectDelay = 1000;
        this.ws?.send(JSON.stringify({ type: "hello", version: PROTOCOL_VERSION }));
        this.setStatus("live");
        this.el("session-info").textContent =
          `session ${msg.session} | config ${msg.config_hash} | ${msg.tick_rate} Hz | beta ${msg.beta}`;
        this.banner(null);
        break;
      }
      case "info":
        if (msg.message === "episode started") {
          this.episodeOutcome = null;
          this.recording.clear();
          this.audit = newAudit();
        }
        this.log(msg.message);
        break;
      case "episode_end":
        this.episodeOutcome = msg.outcome;
        this.recording.finish(msg.outcome);
        this.log(`episode ended: ${msg.outcome}` +
          (msg.entry_sector ? ` via ${msg.entry_sector}` : "") +
          ` after ${msg.steps} steps (return ${msg.env_return.toFixed(2)},` +
          ` ticks ${isGapless(this.audit) ? "gapless" : "GAPPED"})`);
        break;
      case "save_ack":
        this.log(`saved ${msg.demo_id} (entry ${msg.entry_sector}, ${msg.n_steps} steps)`);
        break;
      case "save_rejected":
        this.banner(`save rejected: ${msg.reason}`);
        break;
      case "error":
        this.log(`server error: ${msg.reason}`);
        break;
      case "busy":
        this.banner("service busy: another operator session is active");
        break;
    }
  }

  private control(body: { op: "start" | "reset" | "abort"; seed?: number }): void {
    if (this.keys) this.keys.clear();
    this.ws?.send(JSON.stringify({ type: "control", ...body }));
  }

  private save(): void {
    const surgeonId = this.el<HTMLInputElement>("surgeon-id").value;
    const reason = saveBlockReason({
      episodeOutcome: this.episodeOutcome,
      surgeonId,
      targetSector: this.targetSector,
    });
    if (reason) {
      this.banner(`cannot save: ${reason}`);
      return;
    }
    this.ws?.send(JSON.stringify({
      type: "control", op: "save",
      surgeon_id: surgeonId, target_sector: this.targetSector,
    }));
  }

  private enterReplay(): void {
    if (this.recording.length === 0) {
      this.banner("nothing recorded yet");
      return;
    }
    this.mode = "replay";
    const b = this.cursor.seekFraction(0);
    if (b) this.renderReplayFrame(b);
  }

  private exportRecording(): void {
    const blob = new Blob([exportReplay(this.recording)], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "episode-replay.json";
    a.click();
  }

  private importRecording(e: Event): void {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (!file) return;
    file.text().then((text) => {
      this.recording = importReplay(text);
      this.cursor = new ReplayCursor(this.recording);
      this.enterReplay();
    }).catch((err) => this.banner(`replay import failed: ${err}`));
  }

  private renderReplayFrame(b: TickBundle): void {
    renderBundle(this.views, b, this.targetSector);
    this.el("hud").textContent =
      `REPLAY ${this.cursor.index + 1}/${this.recording.length} | ` + formatHudLine(hudFromBundle(this.hud, b));
  }

  private renderLoop(): void {
    if (this.mode === "live") {
      const bundle = this.buffer.take();
      if (bundle) {
        this.hud = hudFromBundle(this.hud, bundle);
        renderBundle(this.views, bundle, this.targetSector);
        this.el("hud").textContent = formatHudLine(this.hud) +
          (isGapless(this.audit) ? "" : "  [tick gaps!]");
      }
    }
    requestAnimationFrame(() => this.renderLoop());
  }

  private setStatus(s: HudModel["connection"]): void {
    this.hud.connection = s;
    this.el("status").textContent = s;
    this.el("status").className = `status ${s}`;
  }

  private log(line: string): void {
    const el = this.el("log");
    el.textContent = `${line}\n` + (el.textContent ?? "");
  }
}

new Console().start();
