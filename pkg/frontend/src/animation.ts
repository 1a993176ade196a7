/** Per-epoch movement: each incoming frame animates from the previous one. */

import type { EpochMessage } from './types.js';

export interface Frame {
  cycle: number;
  epoch: number;
  /** id -> latent coordinates (first two components drawn) */
  positions: Map<number, readonly number[]>;
}

export function frameFromMessage(msg: EpochMessage): Frame {
  const positions = new Map<number, readonly number[]>();
  for (const row of msg.points) {
    const [id, ...mu] = row;
    positions.set(id!, mu);
  }
  return { cycle: msg.cycle, epoch: msg.epoch, positions };
}

export interface AnimationPlan {
  source: Frame;
  target: Frame;
  /** milliseconds */
  duration: number;
  /** only in target: fades in at its target position */
  entering: Set<number>;
  /** only in source: fades out in place */
  leaving: Set<number>;
}

export function makePlan(source: Frame, target: Frame, duration = 600): AnimationPlan {
  const entering = new Set<number>();
  const leaving = new Set<number>();
  for (const id of target.positions.keys()) if (!source.positions.has(id)) entering.add(id);
  for (const id of source.positions.keys()) if (!target.positions.has(id)) leaving.add(id);
  return { source, target, duration, entering, leaving };
}

/** Smoothstep ease-in-out: 0 at 0 and exactly 1 at 1, C1-smooth between. */
export function easeInOut(t: number): number {
  const c = t < 0 ? 0 : t > 1 ? 1 : t;
  return c * c * (3 - 2 * c);
}

export interface AnimatedPoint {
  x: number;
  y: number;
  /** fade factor for entering/leaving points, 1 for the rest */
  alpha: number;
}

/**
 * Interpolated positions at normalized time t (clamped to [0, 1]):
 * (1 - eased) * source + eased * target, so t >= 1 lands exactly on the
 * target coordinates.
 */
export function positionsAt(plan: AnimationPlan, t: number): Map<number, AnimatedPoint> {
  const e = easeInOut(t);
  const out = new Map<number, AnimatedPoint>();
  for (const [id, to] of plan.target.positions) {
    const from = plan.source.positions.get(id);
    if (from === undefined) {
      out.set(id, { x: to[0]!, y: to[1]!, alpha: e });
    } else {
      out.set(id, {
        x: (1 - e) * from[0]! + e * to[0]!,
        y: (1 - e) * from[1]! + e * to[1]!,
        alpha: 1,
      });
    }
  }
  for (const id of plan.leaving) {
    const from = plan.source.positions.get(id)!;
    out.set(id, { x: from[0]!, y: from[1]!, alpha: 1 - e });
  }
  return out;
}

/**
 * Orders queued frames into back-to-back animation plans.
 *
 * Frames arrive faster than they play; the queue preserves stream order and
 * each plan starts where the previous one ended, so positions are always a
 * pure function of the injected clock.
 */
export class Animator {
  private queue: Frame[] = [];
  private plan: AnimationPlan | null = null;
  private planStart = 0;
  private current: Frame;

  constructor(
    initial: Frame,
    readonly frameMs = 600,
  ) {
    this.current = initial;
  }

  get frame(): Frame {
    return this.plan ? this.plan.target : this.current;
  }

  push(frame: Frame): void {
    this.queue.push(frame);
  }

  /** True once every queued frame has fully played out. */
  settled(now: number): boolean {
    this.advance(now);
    return this.plan === null && this.queue.length === 0;
  }

  /** Reset to a frame immediately, dropping any queued animation. */
  snapTo(frame: Frame): void {
    this.queue.length = 0;
    this.plan = null;
    this.current = frame;
  }

  positions(now: number): Map<number, AnimatedPoint> {
    this.advance(now);
    if (this.plan === null) {
      const out = new Map<number, AnimatedPoint>();
      for (const [id, mu] of this.current.positions) out.set(id, { x: mu[0]!, y: mu[1]!, alpha: 1 });
      return out;
    }
    return positionsAt(this.plan, (now - this.planStart) / this.plan.duration);
  }

  private advance(now: number): void {
    // settle any plans the clock has passed, chaining starts back-to-back
    for (;;) {
      if (this.plan === null) {
        const next = this.queue.shift();
        if (next === undefined) return;
        this.plan = makePlan(this.current, next, this.frameMs);
        this.planStart = now;
      }
      if (now - this.planStart < this.plan.duration) return;
      this.current = this.plan.target;
      this.planStart += this.plan.duration;
      const next = this.queue.shift();
      this.plan = next === undefined ? null : makePlan(this.current, next, this.frameMs);
      if (this.plan === null) return;
    }
  }
}
