/**
 * One-slot latest-frame buffer decoupling network receipt from rendering:
 * the render loop always draws the newest bundle and never queues stale ones.
 */

import type { TickBundle } from "./protocol.js";

export class LatestFrameBuffer {
  private slot: TickBundle | null = null;
  private dirty = false;
  dropped = 0;

  push(bundle: TickBundle): void {
    if (this.dirty) this.dropped += 1;
    this.slot = bundle;
    this.dirty = true;
  }

  /** Returns the newest unrendered bundle once, else null. */
  take(): TickBundle | null {
    if (!this.dirty) return null;
    this.dirty = false;
    return this.slot;
  }

  peek(): TickBundle | null {
    return this.slot;
  }
}
