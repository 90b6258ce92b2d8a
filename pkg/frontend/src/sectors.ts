/**
 * Six-wedge sector overlay for the Top camera, matching the simulator's
 * angular bands: the left half spans 90 degrees centered on -x (three
 * 30-degree bands), the right half covers the remaining 270 degrees (three
 * 90-degree bands). World +x maps to screen right, +y to screen up in the
 * top view.
 */

export const SECTOR_NAMES = ["LEFT1", "LEFT2", "LEFT3", "RIGHT1", "RIGHT2", "RIGHT3"] as const;
export type SectorName = (typeof SECTOR_NAMES)[number];

const DEG = Math.PI / 180;

/** [start, end) azimuth band per sector, radians in [0, 2pi). */
export const SECTOR_BANDS: Record<SectorName, [number, number]> = {
  LEFT1: [135 * DEG, 165 * DEG],
  LEFT2: [165 * DEG, 195 * DEG],
  LEFT3: [195 * DEG, 225 * DEG],
  RIGHT1: [45 * DEG, 135 * DEG],
  RIGHT2: [315 * DEG, 45 * DEG], // wraps through 0
  RIGHT3: [225 * DEG, 315 * DEG],
};

export function sectorOfAzimuth(phi: number): SectorName {
  const tau = 2 * Math.PI;
  const a = ((phi % tau) + tau) % tau;
  for (const name of SECTOR_NAMES) {
    const [lo, hi] = SECTOR_BANDS[name];
    if (lo <= hi ? a >= lo && a < hi : a >= lo || a < hi) return name;
  }
  return "RIGHT2";
}

/** Classify a canvas click relative to the overlay center (canvas y is down). */
export function sectorFromCanvasPoint(
  x: number, y: number, cx: number, cy: number,
): SectorName {
  return sectorOfAzimuth(Math.atan2(cy - y, x - cx));
}

export interface Wedge {
  name: SectorName;
  /** canvas arc angles (clockwise, y-down): drawn with ctx.arc(start, end) */
  startAngle: number;
  endAngle: number;
  isLeft: boolean;
}

export function overlayWedges(): Wedge[] {
  return SECTOR_NAMES.map((name) => {
    const [lo, hi] = SECTOR_BANDS[name];
    return {
      name,
      startAngle: -(hi >= lo ? hi : hi + 2 * Math.PI),
      endAngle: -lo,
      isLeft: name.startsWith("LEFT"),
    };
  });
}

export function sectorFraction(name: SectorName): number {
  const [lo, hi] = SECTOR_BANDS[name];
  const span = hi >= lo ? hi - lo : hi + 2 * Math.PI - lo;
  return span / (2 * Math.PI);
}
