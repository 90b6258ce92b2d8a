import { describe, expect, it } from "vitest";
import { LatestFrameBuffer } from "../src/frameBuffer.js";
import { emptyHud, formatHudLine, hudFromBundle } from "../src/hud.js";
import { ReplayBuffer, ReplayCursor, exportReplay, importReplay } from "../src/replay.js";
import { saveBlockReason } from "../src/saveGuard.js";
import { SECTOR_NAMES, sectorFromCanvasPoint, sectorOfAzimuth, sectorFraction } from "../src/sectors.js";
import { isGapless, newAudit, recordTick } from "../src/tickAudit.js";
import type { TickBundle } from "../src/protocol.js";

function bundle(tick: number): TickBundle {
  return {
    tick, hitC: 2, beta: 20, event: 0, reward: -0.001, distance: 5.25,
    toolState: Float64Array.from([1, 2, 3, 1, 0, 0, 0]),
    frames: [Uint8Array.of(1, 2, 3, 4)], width: 2, height: 2, channels: 1,
  };
}

describe("tick audit", () => {
  it("tracks a gapless run", () => {
    const a = newAudit();
    for (let t = 0; t < 100; t++) expect(recordTick(a, t)).toBe(true);
    expect(isGapless(a)).toBe(true);
    expect(a.received).toBe(100);
  });

  it("flags gaps", () => {
    const a = newAudit();
    recordTick(a, 0);
    recordTick(a, 1);
    expect(recordTick(a, 3)).toBe(false);
    expect(isGapless(a)).toBe(false);
    expect(a.gaps).toBe(1);
  });
});

describe("latest-frame buffer", () => {
  it("renders only the newest tick and counts drops", () => {
    const buf = new LatestFrameBuffer();
    buf.push(bundle(0));
    buf.push(bundle(1));
    buf.push(bundle(2));
    expect(buf.take()!.tick).toBe(2);
    expect(buf.take()).toBeNull();
    expect(buf.dropped).toBe(2);
  });
});

describe("hud", () => {
  it("reflects the most recent server bundle", () => {
    const h = hudFromBundle(emptyHud(), bundle(42));
    expect(h.tick).toBe(42);
    expect(h.hitC).toBe(2);
    expect(h.lastEvent).toBe("Shaping");
    expect(formatHudLine(h)).toContain("tick 42");
    expect(formatHudLine(h)).toContain("hits 2/20");
  });
});

describe("save guard", () => {
  const base = { episodeOutcome: "SUCCESS", surgeonId: "dr", targetSector: "LEFT2" };

  it("allows a complete successful save", () => {
    expect(saveBlockReason(base)).toBeNull();
  });

  it("blocks after failure or timeout outcomes", () => {
    expect(saveBlockReason({ ...base, episodeOutcome: "FAIL" })).toMatch(/FAIL/);
    expect(saveBlockReason({ ...base, episodeOutcome: "TIMEOUT" })).toMatch(/TIMEOUT/);
    expect(saveBlockReason({ ...base, episodeOutcome: null })).toMatch(/no finished episode/);
  });

  it("blocks when surgeon id or sector missing", () => {
    expect(saveBlockReason({ ...base, surgeonId: "  " })).toMatch(/surgeon id/);
    expect(saveBlockReason({ ...base, targetSector: null })).toMatch(/target sector/);
  });
});

describe("sector overlay", () => {
  it("matches the simulator's angular bands", () => {
    const deg = Math.PI / 180;
    expect(sectorOfAzimuth(150 * deg)).toBe("LEFT1");
    expect(sectorOfAzimuth(180 * deg)).toBe("LEFT2");
    expect(sectorOfAzimuth(210 * deg)).toBe("LEFT3");
    expect(sectorOfAzimuth(90 * deg)).toBe("RIGHT1");
    expect(sectorOfAzimuth(0)).toBe("RIGHT2");
    expect(sectorOfAzimuth(270 * deg)).toBe("RIGHT3");
  });

  it("covers the circle with a 1:3 left:right split", () => {
    let left = 0;
    let right = 0;
    for (const name of SECTOR_NAMES) {
      const f = sectorFraction(name);
      if (name.startsWith("LEFT")) left += f;
      else right += f;
    }
    expect(left).toBeCloseTo(0.25, 10);
    expect(right).toBeCloseTo(0.75, 10);
  });

  it("classifies canvas clicks (y axis points down on canvas)", () => {
    // click left of center -> LEFT2; above center -> RIGHT1
    expect(sectorFromCanvasPoint(10, 50, 50, 50)).toBe("LEFT2");
    expect(sectorFromCanvasPoint(50, 10, 50, 50)).toBe("RIGHT1");
    expect(sectorFromCanvasPoint(90, 50, 50, 50)).toBe("RIGHT2");
    expect(sectorFromCanvasPoint(50, 90, 50, 50)).toBe("RIGHT3");
  });
});

describe("replay", () => {
  function filled(): ReplayBuffer {
    const buf = new ReplayBuffer();
    for (let t = 0; t < 10; t++) buf.record(bundle(t));
    buf.finish("SUCCESS");
    return buf;
  }

  it("scrubs by fraction", () => {
    const cursor = new ReplayCursor(filled());
    expect(cursor.seekFraction(0)!.tick).toBe(0);
    expect(cursor.seekFraction(0.55)!.tick).toBe(5);
    expect(cursor.seekFraction(1)!.tick).toBe(9);
    expect(cursor.seekFraction(2)!.tick).toBe(9);
  });

  it("steps tick-by-tick and stops at the end", () => {
    const cursor = new ReplayCursor(filled());
    cursor.seekFraction(0);
    const seen: number[] = [];
    let b = cursor.step();
    while (b) {
      seen.push(b.tick);
      b = cursor.step();
    }
    expect(seen).toEqual([1, 2, 3, 4, 5, 6, 7, 8, 9]);
  });

  it("export/import preserves the recording", () => {
    const buf = filled();
    const back = importReplay(exportReplay(buf));
    expect(back.length).toBe(10);
    expect(back.outcome).toBe("SUCCESS");
    expect(back.bundles[3].tick).toBe(3);
    expect(Array.from(back.bundles[3].frames[0])).toEqual([1, 2, 3, 4]);
    expect(Array.from(back.bundles[3].toolState)).toEqual([1, 2, 3, 1, 0, 0, 0]);
  });

  it("rejects unknown versions", () => {
    expect(() => importReplay(JSON.stringify({ version: 2, bundles: [] }))).toThrow();
  });
});
