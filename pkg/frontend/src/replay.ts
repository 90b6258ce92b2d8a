/**
 * Replay of a recorded episode: the console buffers every decoded tick
 * bundle of the live session; replay mode plays that buffer back through the
 * same renderer with a progress scrubber. Buffers can be exported/imported
 * as JSON for offline review.
 */

import type { TickBundle } from "./protocol.js";

export class ReplayBuffer {
  bundles: TickBundle[] = [];
  outcome: string | null = null;

  record(b: TickBundle): void {
    this.bundles.push(b);
  }

  finish(outcome: string): void {
    this.outcome = outcome;
  }

  clear(): void {
    this.bundles = [];
    this.outcome = null;
  }

  get length(): number {
    return this.bundles.length;
  }
}

export class ReplayCursor {
  private buffer: ReplayBuffer;
  index = 0;
  playing = false;

  constructor(buffer: ReplayBuffer) {
    this.buffer = buffer;
  }

  /** Scrubber position in [0, 1] -> frame index. */
  seekFraction(f: number): TickBundle | null {
    if (this.buffer.length === 0) return null;
    const clamped = Math.min(1, Math.max(0, f));
    this.index = Math.min(
      this.buffer.length - 1, Math.floor(clamped * this.buffer.length),
    );
    return this.buffer.bundles[this.index];
  }

  fraction(): number {
    return this.buffer.length <= 1 ? 0 : this.index / (this.buffer.length - 1);
  }

  step(): TickBundle | null {
    if (this.index >= this.buffer.length - 1) {
      this.playing = false;
      return null;
    }
    this.index += 1;
    return this.buffer.bundles[this.index];
  }

  current(): TickBundle | null {
    return this.buffer.length ? this.buffer.bundles[this.index] : null;
  }
}

interface SerializedBundle {
  tick: number; hitC: number; beta: number; event: number;
  reward: number; distance: number; toolState: number[];
  width: number; height: number; channels: number;
  frames: string[]; // base64 pixel bytes per camera
}

export function exportReplay(buffer: ReplayBuffer): string {
  const rows: SerializedBundle[] = buffer.bundles.map((b) => ({
    tick: b.tick, hitC: b.hitC, beta: b.beta, event: b.event,
    reward: b.reward, distance: b.distance,
    toolState: Array.from(b.toolState),
    width: b.width, height: b.height, channels: b.channels,
    frames: b.frames.map(bytesToBase64),
  }));
  return JSON.stringify({ version: 1, outcome: buffer.outcome, bundles: rows });
}

export function importReplay(text: string): ReplayBuffer {
  const data = JSON.parse(text);
  if (data.version !== 1) throw new Error(`unsupported replay version ${data.version}`);
  const buffer = new ReplayBuffer();
  buffer.outcome = data.outcome ?? null;
  for (const row of data.bundles as SerializedBundle[]) {
    buffer.record({
      tick: row.tick, hitC: row.hitC, beta: row.beta, event: row.event,
      reward: row.reward, distance: row.distance,
      toolState: Float64Array.from(row.toolState),
      width: row.width, height: row.height, channels: row.channels,
      frames: row.frames.map(base64ToBytes),
    });
  }
  return buffer;
}

function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

function base64ToBytes(text: string): Uint8Array {
  const binary = atob(text);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}
