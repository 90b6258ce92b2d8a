/** HUD view-model derived from the latest server messages (pure). */

import { EVENT_NAMES, type TickBundle } from "./protocol.js";

export interface HudModel {
  connection: "disconnected" | "connecting" | "live" | "ended" | "incompatible";
  tick: number;
  distanceMm: number;
  hitC: number;
  beta: number;
  lastEvent: string;
  lastReward: number;
  toolPosition: [number, number, number];
  banner: string | null;
}

export function emptyHud(): HudModel {
  return {
    connection: "disconnected",
    tick: 0,
    distanceMm: NaN,
    hitC: 0,
    beta: 0,
    lastEvent: "-",
    lastReward: 0,
    toolPosition: [NaN, NaN, NaN],
    banner: null,
  };
}

export function hudFromBundle(prev: HudModel, b: TickBundle): HudModel {
  return {
    ...prev,
    connection: "live",
    tick: b.tick,
    distanceMm: b.distance,
    hitC: b.hitC,
    beta: b.beta,
    lastEvent: EVENT_NAMES[b.event] ?? `event ${b.event}`,
    lastReward: b.reward,
    toolPosition: [b.toolState[0], b.toolState[1], b.toolState[2]],
    banner: null,
  };
}

export function formatHudLine(h: HudModel): string {
  const d = Number.isFinite(h.distanceMm) ? h.distanceMm.toFixed(2) : "-";
  return `tick ${h.tick}  dist ${d} mm  hits ${h.hitC}/${h.beta}  ` +
    `${h.lastEvent} (${h.lastReward.toFixed(3)})`;
}
