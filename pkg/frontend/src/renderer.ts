/** Canvas drawing and the uniform-grid hit index for hover/lasso speed. */

import type { AnimatedPoint } from './animation.js';
import { Camera } from './camera.js';
import { CLASS_PALETTE, SELECTION_COLOR, pointStyle } from './colors.js';
import type { Vec2 } from './geometry.js';
import { marginalHistogram } from './histogram.js';
import type { AppStore } from './store.js';

const POINT_RADIUS = 2.5;
const MARGINAL_THICKNESS = 64;

/** Uniform spatial grid over screen space; O(1) point lookup under cursor. */
export class HitGrid {
  private cells = new Map<string, { id: number; x: number; y: number }[]>();

  constructor(readonly cellSize = 24) {}

  rebuild(points: Iterable<{ id: number; x: number; y: number }>): void {
    this.cells.clear();
    for (const p of points) {
      const key = `${Math.floor(p.x / this.cellSize)},${Math.floor(p.y / this.cellSize)}`;
      let bucket = this.cells.get(key);
      if (bucket === undefined) {
        bucket = [];
        this.cells.set(key, bucket);
      }
      bucket.push(p);
    }
  }

  /** Nearest point id within `radius` pixels, or null. */
  nearest(x: number, y: number, radius: number): number | null {
    const r2 = radius * radius;
    const c = this.cellSize;
    let best: number | null = null;
    let bestD = r2;
    for (let gx = Math.floor((x - radius) / c); gx <= Math.floor((x + radius) / c); gx++) {
      for (let gy = Math.floor((y - radius) / c); gy <= Math.floor((y + radius) / c); gy++) {
        const bucket = this.cells.get(`${gx},${gy}`);
        if (bucket === undefined) continue;
        for (const p of bucket) {
          const d = (p.x - x) ** 2 + (p.y - y) ** 2;
          if (d <= bestD) {
            bestD = d;
            best = p.id;
          }
        }
      }
    }
    return best;
  }
}

export interface RenderFrame {
  positions: Map<number, AnimatedPoint>;
  lasso: readonly Vec2[] | null;
  hoverId: number | null;
}

export class Renderer {
  readonly hits = new HitGrid();

  constructor(
    private readonly ctx: CanvasRenderingContext2D,
    readonly camera: Camera,
  ) {}

  draw(store: AppStore, frame: RenderFrame): void {
    const { ctx, camera } = this;
    ctx.fillStyle = '#101014';
    ctx.fillRect(0, 0, camera.viewWidth, camera.viewHeight);

    const screenPts: { id: number; x: number; y: number }[] = [];
    for (const [id, pos] of frame.positions) {
      const rec = store.points.get(id);
      if (rec === undefined) continue;
      const [sx, sy] = camera.dataToScreen([pos.x, pos.y]);
      screenPts.push({ id, x: sx, y: sy });
      const style = pointStyle(rec);
      ctx.globalAlpha = style.alpha * pos.alpha;
      ctx.fillStyle = style.fill;
      ctx.beginPath();
      ctx.arc(sx, sy, POINT_RADIUS, 0, 2 * Math.PI);
      ctx.fill();
      if (store.selection.has(id) || id === frame.hoverId) {
        ctx.globalAlpha = 1;
        ctx.strokeStyle = SELECTION_COLOR;
        ctx.lineWidth = id === frame.hoverId ? 1.5 : 1;
        ctx.stroke();
      }
    }
    ctx.globalAlpha = 1;
    this.hits.rebuild(screenPts);

    this.drawMarginals(store, frame.positions);
    if (frame.lasso !== null && frame.lasso.length >= 2) this.drawLasso(frame.lasso);
  }

  private drawLasso(polygon: readonly Vec2[]): void {
    const { ctx } = this;
    ctx.strokeStyle = SELECTION_COLOR;
    ctx.setLineDash([4, 4]);
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(polygon[0]![0], polygon[0]![1]);
    for (const [x, y] of polygon.slice(1)) ctx.lineTo(x, y);
    ctx.closePath();
    ctx.stroke();
    ctx.setLineDash([]);
  }

  /** Stacked 30-bin histograms along the bottom (x) and left (y) edges. */
  private drawMarginals(store: AppStore, positions: Map<number, AnimatedPoint>): void {
    const xs: number[] = [];
    const ys: number[] = [];
    const classes: number[] = [];
    for (const [id, pos] of positions) {
      const rec = store.points.get(id);
      if (rec === undefined) continue;
      xs.push(pos.x);
      ys.push(pos.y);
      classes.push(rec.label ?? rec.pred);
    }
    if (xs.length === 0) return;
    this.drawStack(marginalHistogram(xs, classes), 'x');
    this.drawStack(marginalHistogram(ys, classes), 'y');
  }

  private drawStack(hist: ReturnType<typeof marginalHistogram>, axis: 'x' | 'y'): void {
    const { ctx, camera } = this;
    const peak = Math.max(1, ...hist.counts);
    const bins = hist.counts.length;
    ctx.globalAlpha = 0.85;
    for (let b = 0; b < bins; b++) {
      let offset = 0;
      for (const [cls, stack] of hist.byClass) {
        const count = stack[b]!;
        if (count === 0) continue;
        const length = (count / peak) * MARGINAL_THICKNESS;
        ctx.fillStyle = CLASS_PALETTE[cls % CLASS_PALETTE.length]!;
        if (axis === 'x') {
          const x0 = camera.dataToScreen([hist.edges[b]!, 0])[0];
          const x1 = camera.dataToScreen([hist.edges[b + 1]!, 0])[0];
          ctx.fillRect(x0, camera.viewHeight - offset - length, x1 - x0, length);
        } else {
          const y0 = camera.dataToScreen([0, hist.edges[b]!])[1];
          const y1 = camera.dataToScreen([0, hist.edges[b + 1]!])[1];
          ctx.fillRect(offset, y1, length, y0 - y1);
        }
        offset += length;
      }
    }
    ctx.globalAlpha = 1;
  }
}
