/**
 * Wire protocol shared with the session service.
 *
 * Text frames are JSON control/status messages; binary frames are per-tick
 * bundles with the layout (little-endian):
 *   u8 version | u8 nCams | u16 width | u16 height | u8 channels |
 *   u8 event | u64 tick | u32 hitC | u32 beta | f32 reward | f32 distance |
 *   f64 toolState[7] | nCams * width * height * channels pixel bytes
 */

export const PROTOCOL_VERSION = 1;
export const HEADER_BYTES = 88;

export const EVENT_NAMES = ["Shaping", "CorrectHit", "Success", "Fail", "Timeout"] as const;

export interface Hello {
  type: "hello";
  version: number;
  session: string;
  tick_rate: number;
  beta: number;
  bounds: { translation_mm: number; rotation_rad: number };
  obs: { width: number; height: number; channels: number };
  cameras: string[];
  config_hash: string;
}

export type ServerText =
  | Hello
  | { type: "info"; message: string; seed?: number }
  | { type: "episode_end"; tick: number; outcome: string; entry_sector: string | null; steps: number; env_return: number }
  | { type: "save_ack"; demo_id: string; valid: boolean; entry_sector: string | null; n_steps: number }
  | { type: "save_rejected"; reason: string }
  | { type: "error"; reason: string; tick?: number }
  | { type: "busy" };

export type ClientText =
  | { type: "hello"; version: number }
  | { type: "action"; tick: number; delta: number[] }
  | { type: "control"; op: "start" | "reset" | "abort"; seed?: number }
  | { type: "control"; op: "save"; surgeon_id: string; target_sector: string };

export interface TickBundle {
  tick: number;
  hitC: number;
  beta: number;
  event: number;
  reward: number;
  distance: number;
  toolState: Float64Array;
  /** one Uint8Array of width*height*channels bytes per camera */
  frames: Uint8Array[];
  width: number;
  height: number;
  channels: number;
}

export class ProtocolError extends Error {}

export function decodeTickBundle(buf: ArrayBuffer): TickBundle {
  if (buf.byteLength < HEADER_BYTES) {
    throw new ProtocolError(`bundle too short: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  let off = 0;
  const version = view.getUint8(off); off += 1;
  const nCams = view.getUint8(off); off += 1;
  const width = view.getUint16(off, true); off += 2;
  const height = view.getUint16(off, true); off += 2;
  const channels = view.getUint8(off); off += 1;
  const event = view.getUint8(off); off += 1;
  const tick = Number(view.getBigUint64(off, true)); off += 8;
  const hitC = view.getUint32(off, true); off += 4;
  const beta = view.getUint32(off, true); off += 4;
  const reward = view.getFloat32(off, true); off += 4;
  const distance = view.getFloat32(off, true); off += 4;
  const toolState = new Float64Array(7);
  for (let i = 0; i < 7; i++) {
    toolState[i] = view.getFloat64(off, true); off += 8;
  }
  if (version !== PROTOCOL_VERSION) {
    throw new ProtocolError(`protocol version mismatch: got ${version}, want ${PROTOCOL_VERSION}`);
  }
  const frameLen = width * height * channels;
  if (buf.byteLength !== HEADER_BYTES + nCams * frameLen) {
    throw new ProtocolError(
      `truncated bundle: ${buf.byteLength} bytes for ${nCams} frames of ${frameLen}`,
    );
  }
  const frames: Uint8Array[] = [];
  for (let i = 0; i < nCams; i++) {
    frames.push(new Uint8Array(buf, HEADER_BYTES + i * frameLen, frameLen));
  }
  return { tick, hitC, beta, event, reward, distance, toolState, frames, width, height, channels };
}

/** Build a bundle buffer (tests and local replay fixtures). */
export function encodeTickBundle(b: TickBundle): ArrayBuffer {
  const frameLen = b.width * b.height * b.channels;
  const out = new ArrayBuffer(HEADER_BYTES + b.frames.length * frameLen);
  const view = new DataView(out);
  let off = 0;
  view.setUint8(off, PROTOCOL_VERSION); off += 1;
  view.setUint8(off, b.frames.length); off += 1;
  view.setUint16(off, b.width, true); off += 2;
  view.setUint16(off, b.height, true); off += 2;
  view.setUint8(off, b.channels); off += 1;
  view.setUint8(off, b.event); off += 1;
  view.setBigUint64(off, BigInt(b.tick), true); off += 8;
  view.setUint32(off, b.hitC, true); off += 4;
  view.setUint32(off, b.beta, true); off += 4;
  view.setFloat32(off, b.reward, true); off += 4;
  view.setFloat32(off, b.distance, true); off += 4;
  for (let i = 0; i < 7; i++) {
    view.setFloat64(off, b.toolState[i], true); off += 8;
  }
  const bytes = new Uint8Array(out);
  b.frames.forEach((f, i) => bytes.set(f, HEADER_BYTES + i * frameLen));
  return out;
}

/** Validate the server hello; returns an error string for the banner, or null. */
export function checkHello(msg: unknown): string | null {
  const m = msg as Partial<Hello>;
  if (!m || m.type !== "hello") return "handshake: first message was not a hello";
  if (m.version !== PROTOCOL_VERSION) {
    return `incompatible protocol: server version ${m.version}, console version ${PROTOCOL_VERSION}`;
  }
  if (!m.obs || !m.bounds || !Array.isArray(m.cameras) || m.cameras.length !== 3) {
    return "handshake: malformed hello payload";
  }
  return null;
}
