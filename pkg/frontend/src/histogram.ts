/** Marginal histograms for the scatter axes, stacked by class color. */

export const BIN_COUNT = 30;

export interface MarginalHistogram {
  /** BIN_COUNT + 1 edges over the data extent */
  edges: number[];
  /** total count per bin; sums to the number of values */
  counts: number[];
  /** per-class stacks, classIndex -> bin -> count */
  byClass: Map<number, number[]>;
}

/**
 * 30 equal-width bins over [min, max] of the data; the max value lands in
 * the last bin. All-identical input degenerates to a single full bin.
 */
export function marginalHistogram(values: readonly number[], classes: readonly number[], bins = BIN_COUNT): MarginalHistogram {
  if (values.length !== classes.length) {
    throw new Error(`values (${values.length}) and classes (${classes.length}) must align`);
  }
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!Number.isFinite(lo)) {
    lo = 0;
    hi = 1;
  }
  const span = hi - lo;
  const edges = Array.from({ length: bins + 1 }, (_, i) => lo + (span * i) / bins);
  const counts = new Array<number>(bins).fill(0);
  const byClass = new Map<number, number[]>();
  for (let i = 0; i < values.length; i++) {
    const bin = span === 0 ? 0 : Math.min(bins - 1, Math.floor(((values[i]! - lo) / span) * bins));
    counts[bin]!++;
    const cls = classes[i]!;
    let stack = byClass.get(cls);
    if (stack === undefined) {
      stack = new Array<number>(bins).fill(0);
      byClass.set(cls, stack);
    }
    stack[bin]!++;
  }
  return { edges, counts, byClass };
}
