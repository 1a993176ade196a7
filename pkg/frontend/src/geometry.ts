/** Lasso geometry: even-odd point-in-polygon with inclusive boundaries. */

export type Vec2 = readonly [number, number];

export class DegeneratePolygon extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'DegeneratePolygon';
  }
}

/** Signed area via the shoelace formula (positive for counter-clockwise). */
export function polygonArea(polygon: readonly Vec2[]): number {
  let twice = 0;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const [xi, yi] = polygon[i]!;
    const [xj, yj] = polygon[j]!;
    twice += xj * yi - xi * yj;
  }
  return twice / 2;
}

/** True when p lies exactly on the closed segment a-b. */
export function pointOnSegment(p: Vec2, a: Vec2, b: Vec2): boolean {
  const cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
  if (cross !== 0) return false;
  return (
    Math.min(a[0], b[0]) <= p[0] &&
    p[0] <= Math.max(a[0], b[0]) &&
    Math.min(a[1], b[1]) <= p[1] &&
    p[1] <= Math.max(a[1], b[1])
  );
}

/**
 * Even-odd (ray-crossing) containment test. The polygon is treated as
 * closed; points on an edge or vertex count as inside.
 */
export function pointInPolygon(p: Vec2, polygon: readonly Vec2[]): boolean {
  const [x, y] = p;
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const a = polygon[i]!;
    const b = polygon[j]!;
    if (pointOnSegment(p, a, b)) return true;
    // half-open rule on y keeps vertices from double-counting
    const crosses = a[1] > y !== b[1] > y && x < ((b[0] - a[0]) * (y - a[1])) / (b[1] - a[1]) + a[0];
    if (crosses) inside = !inside;
  }
  return inside;
}

export interface LassoPoint {
  id: number;
  x: number;
  y: number;
}

/**
 * Ids of the points captured by a lasso polygon (auto-closed).
 *
 * Throws DegeneratePolygon for fewer than 3 vertices or zero area; the
 * caller surfaces that as an empty selection plus a notice.
 */
export function lassoSelect(polygon: readonly Vec2[], points: Iterable<LassoPoint>): Set<number> {
  if (polygon.length < 3) {
    throw new DegeneratePolygon(`lasso needs >= 3 vertices, got ${polygon.length}`);
  }
  if (polygonArea(polygon) === 0) {
    throw new DegeneratePolygon('lasso polygon has zero area');
  }
  const selected = new Set<number>();
  for (const pt of points) {
    if (pointInPolygon([pt.x, pt.y], polygon)) selected.add(pt.id);
  }
  return selected;
}
