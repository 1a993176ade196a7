/** Client-side session state: points, selection, notices, busy flag. */

import type { ApiClient } from './api.js';
import { ApiError } from './api.js';
import { DegeneratePolygon, lassoSelect, type LassoPoint, type Vec2 } from './geometry.js';
import type { PointRecord, PointsPayload } from './types.js';

export interface Notice {
  kind: 'info' | 'error';
  text: string;
}

export class AppStore {
  points = new Map<number, PointRecord>();
  /** sample ids, not screen coordinates: selection survives pan/zoom */
  selection = new Set<number>();
  cycle = 0;
  epoch = 0;
  training = false;
  latentDim = 2;
  notice: Notice | null = null;

  loadPoints(payload: PointsPayload): void {
    this.points.clear();
    for (const p of payload.points) this.points.set(p.id, p);
    this.cycle = payload.cycle;
    this.epoch = payload.epoch;
    for (const id of this.selection) if (!this.points.has(id)) this.selection.delete(id);
  }

  /**
   * Replaces the selection with the lasso capture; a degenerate polygon
   * clears it and posts a notice instead of throwing at the caller.
   */
  applyLasso(polygon: readonly Vec2[], screenPoints: Iterable<LassoPoint>): void {
    try {
      this.selection = lassoSelect(polygon, screenPoints);
      this.notice = this.selection.size === 0 ? { kind: 'info', text: 'lasso captured no points' } : null;
    } catch (err) {
      if (!(err instanceof DegeneratePolygon)) throw err;
      this.selection = new Set();
      this.notice = { kind: 'error', text: `ignored degenerate lasso: ${err.message}` };
    }
  }

  clearSelection(): void {
    this.selection.clear();
  }

  /**
   * Annotates the whole selection with one API call, recoloring
   * optimistically; a rejected call rolls the labels back and keeps the
   * selection for retry.
   */
  async annotateSelection(label: number, api: ApiClient): Promise<boolean> {
    if (this.selection.size === 0) return false;
    const ids = Array.from(this.selection);
    const before = new Map<number, number | null>();
    for (const id of ids) {
      const p = this.points.get(id);
      if (p !== undefined) {
        before.set(id, p.label);
        p.label = label;
      }
    }
    try {
      const result = await api.annotate(ids, label);
      this.notice = { kind: 'info', text: `labeled ${result.accepted} points as ${label}` };
      this.selection = new Set();
      return true;
    } catch (err) {
      for (const [id, prev] of before) {
        const p = this.points.get(id);
        if (p !== undefined) p.label = prev;
      }
      if (err instanceof ApiError) {
        this.notice = { kind: 'error', text: `annotation rejected: ${err.message}` };
        return false;
      }
      throw err;
    }
  }
}
