/**
 * Canvas blitting of raw frame bytes. The server is the single source of
 * visual truth: pixels arrive as width*height*channels u8 and are drawn 1:1
 * into an offscreen ImageData, then scaled onto the visible canvas.
 */

import type { TickBundle } from "./protocol.js";
import { overlayWedges } from "./sectors.js";

export function frameToImageData(
  pixels: Uint8Array, width: number, height: number, channels: number,
): ImageData {
  const img = new ImageData(width, height);
  const out = img.data;
  for (let i = 0; i < width * height; i++) {
    let r: number, g: number, b: number;
    if (channels === 1) {
      r = g = b = pixels[i];
    } else {
      r = pixels[i * channels];
      g = pixels[i * channels + 1];
      b = pixels[i * channels + 2];
    }
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = 255;
  }
  return img;
}

export class CameraView {
  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private off: HTMLCanvasElement;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    this.ctx = canvas.getContext("2d")!;
    this.ctx.imageSmoothingEnabled = false;
    this.off = document.createElement("canvas");
  }

  draw(pixels: Uint8Array, width: number, height: number, channels: number): void {
    if (this.off.width !== width || this.off.height !== height) {
      this.off.width = width;
      this.off.height = height;
    }
    const octx = this.off.getContext("2d")!;
    octx.putImageData(frameToImageData(pixels, width, height, channels), 0, 0);
    this.ctx.imageSmoothingEnabled = false;
    this.ctx.drawImage(this.off, 0, 0, this.canvas.width, this.canvas.height);
  }

  /** Fig.1-style sector wedges over the top view; highlights the target. */
  drawSectorOverlay(target: string | null): void {
    const ctx = this.ctx;
    const cx = this.canvas.width / 2;
    const cy = this.canvas.height / 2;
    const radius = Math.min(cx, cy) * 0.72;
    ctx.save();
    ctx.lineWidth = 1;
    for (const wedge of overlayWedges()) {
      ctx.beginPath();
      ctx.moveTo(cx, cy);
      ctx.arc(cx, cy, radius, wedge.startAngle, wedge.endAngle, false);
      ctx.closePath();
      const base = wedge.isLeft ? "255, 120, 120" : "120, 170, 255";
      ctx.fillStyle = `rgba(${base}, ${wedge.name === target ? 0.45 : 0.12})`;
      ctx.strokeStyle = `rgba(${base}, 0.8)`;
      ctx.fill();
      ctx.stroke();
    }
    ctx.restore();
  }
}

export function renderBundle(views: CameraView[], bundle: TickBundle,
                             targetSector: string | null): void {
  bundle.frames.forEach((pixels, i) => {
    const view = views[i];
    if (!view) return;
    view.draw(pixels, bundle.width, bundle.height, bundle.channels);
    if (i === 0) view.drawSectorOverlay(targetSector);
  });
}
