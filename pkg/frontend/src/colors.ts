/** Class palette and the annotated-vs-predicted color rule. */

import type { PointRecord } from './types.js';

/** Matches the palette the server uses in exported SVG panels. */
export const CLASS_PALETTE = [
  '#1f77b4',
  '#ff7f0e',
  '#2ca02c',
  '#d62728',
  '#9467bd',
  '#8c564b',
  '#e377c2',
  '#7f7f7f',
  '#bcbd22',
  '#17becf',
] as const;

export const SELECTION_COLOR = '#ffffff';

/** Opacity band for unannotated points, scaled by classifier confidence. */
const PRED_ALPHA_MIN = 0.2;
const PRED_ALPHA_MAX = 0.75;

export interface PointStyle {
  fill: string;
  alpha: number;
}

/**
 * Annotated points show their label color at full opacity; unannotated
 * points show the predicted class at reduced opacity scaled by confidence,
 * keeping human-assigned and model-guessed classes visually distinct.
 */
export function pointStyle(p: Pick<PointRecord, 'label' | 'pred' | 'conf'>): PointStyle {
  if (p.label !== null) {
    return { fill: CLASS_PALETTE[p.label % CLASS_PALETTE.length]!, alpha: 1 };
  }
  const conf = Math.min(1, Math.max(0, p.conf));
  return {
    fill: CLASS_PALETTE[p.pred % CLASS_PALETTE.length]!,
    alpha: PRED_ALPHA_MIN + (PRED_ALPHA_MAX - PRED_ALPHA_MIN) * conf,
  };
}
