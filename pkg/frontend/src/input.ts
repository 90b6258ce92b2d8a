/**
 * Keyboard mapping to bounded 6-DoF deltas (mm / rad), clamped to the
 * server-advertised bounds. One action is derived per received tick from the
 * currently held keys.
 *
 * Mapping (Top-camera aligned):
 *   ArrowLeft/ArrowRight  -x / +x      ArrowUp/ArrowDown  +y / -y
 *   KeyW / KeyS           -z / +z      (descend / withdraw)
 *   KeyQ / KeyE           roll - / +
 *   Shift+ArrowUp/Down    pitch + / -  Shift+ArrowLeft/Right  yaw + / -
 */

export interface Bounds {
  translation_mm: number;
  rotation_rad: number;
}

export class KeyState {
  private held = new Set<string>();
  shift = false;

  keyDown(code: string, shift: boolean): void {
    this.held.add(code);
    this.shift = shift;
  }

  keyUp(code: string, shift: boolean): void {
    this.held.delete(code);
    this.shift = shift;
  }

  clear(): void {
    this.held.clear();
    this.shift = false;
  }

  has(code: string): boolean {
    return this.held.has(code);
  }
}

export function actionFromKeys(keys: KeyState, bounds: Bounds): number[] {
  const t = bounds.translation_mm;
  const r = bounds.rotation_rad;
  const d = [0, 0, 0, 0, 0, 0];
  if (!keys.shift) {
    if (keys.has("ArrowLeft")) d[0] -= t;
    if (keys.has("ArrowRight")) d[0] += t;
    if (keys.has("ArrowUp")) d[1] += t;
    if (keys.has("ArrowDown")) d[1] -= t;
  } else {
    if (keys.has("ArrowUp")) d[4] += r;
    if (keys.has("ArrowDown")) d[4] -= r;
    if (keys.has("ArrowLeft")) d[5] += r;
    if (keys.has("ArrowRight")) d[5] -= r;
  }
  if (keys.has("KeyW")) d[2] -= t;
  if (keys.has("KeyS")) d[2] += t;
  if (keys.has("KeyQ")) d[3] -= r;
  if (keys.has("KeyE")) d[3] += r;
  return clampAction(d, bounds);
}

export function clampAction(delta: number[], bounds: Bounds): number[] {
  const lim = [
    bounds.translation_mm, bounds.translation_mm, bounds.translation_mm,
    bounds.rotation_rad, bounds.rotation_rad, bounds.rotation_rad,
  ];
  return delta.map((v, i) => Math.min(lim[i], Math.max(-lim[i], v)));
}

export function isZeroAction(delta: number[]): boolean {
  return delta.every((v) => v === 0);
}
