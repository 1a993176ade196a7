/** Pan/zoom between latent (data) space and canvas pixels. */

import type { Vec2 } from './geometry.js';

export class Camera {
  /** data units -> pixels */
  scale = 50;
  /** data-space point at the viewport center */
  cx = 0;
  cy = 0;

  constructor(
    public viewWidth: number,
    public viewHeight: number,
  ) {}

  /** y flips: latent y grows upward, canvas y grows downward. */
  dataToScreen(p: Vec2): Vec2 {
    return [(p[0] - this.cx) * this.scale + this.viewWidth / 2, this.viewHeight / 2 - (p[1] - this.cy) * this.scale];
  }

  screenToData(s: Vec2): Vec2 {
    return [(s[0] - this.viewWidth / 2) / this.scale + this.cx, (this.viewHeight / 2 - s[1]) / this.scale + this.cy];
  }

  panByPixels(dx: number, dy: number): void {
    this.cx -= dx / this.scale;
    this.cy += dy / this.scale;
  }

  /** Scales around a fixed screen point so the data under it stays put. */
  zoomAt(anchor: Vec2, factor: number): void {
    const before = this.screenToData(anchor);
    this.scale = Math.min(1e5, Math.max(1e-3, this.scale * factor));
    const after = this.screenToData(anchor);
    this.cx += before[0] - after[0];
    this.cy += before[1] - after[1];
  }

  /** Frames the given data extent with a margin fraction on each side. */
  fitBounds(xs: Iterable<number>, ys: Iterable<number>, margin = 0.08): void {
    let xmin = Infinity;
    let xmax = -Infinity;
    let ymin = Infinity;
    let ymax = -Infinity;
    for (const x of xs) {
      if (x < xmin) xmin = x;
      if (x > xmax) xmax = x;
    }
    for (const y of ys) {
      if (y < ymin) ymin = y;
      if (y > ymax) ymax = y;
    }
    if (!Number.isFinite(xmin) || !Number.isFinite(ymin)) return;
    const spanX = Math.max(xmax - xmin, 1e-6);
    const spanY = Math.max(ymax - ymin, 1e-6);
    this.cx = (xmin + xmax) / 2;
    this.cy = (ymin + ymax) / 2;
    this.scale = Math.min(
      this.viewWidth / (spanX * (1 + 2 * margin)),
      this.viewHeight / (spanY * (1 + 2 * margin)),
    );
  }
}
