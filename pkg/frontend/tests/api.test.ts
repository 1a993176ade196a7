import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError, openStream, streamUrl } from '../src/api.js';
import type { StreamMessage } from '../src/types.js';

interface RecordedCall {
  url: string;
  method: string;
  body: unknown;
}

/** fetch stand-in that records requests and replays canned responses. */
function fakeFetch(responses: { status: number; body: unknown }[]): {
  calls: RecordedCall[];
  fetch: (input: string, init?: RequestInit) => Promise<Response>;
} {
  const calls: RecordedCall[] = [];
  return {
    calls,
    fetch: (input, init) => {
      calls.push({
        url: input,
        method: init?.method ?? 'GET',
        body: typeof init?.body === 'string' ? JSON.parse(init.body) : undefined,
      });
      const next = responses.shift() ?? { status: 200, body: {} };
      return Promise.resolve(
        new Response(JSON.stringify(next.body), {
          status: next.status,
          headers: { 'content-type': 'application/json' },
        }),
      );
    },
  };
}

describe('ApiClient.annotate', () => {
  it('acceptance: a lasso of k points issues exactly one call with k assignments', () => {
    const k = 12;
    const ids = Array.from({ length: k }, (_, i) => 100 + i);
    const { calls, fetch } = fakeFetch([{ status: 200, body: { accepted: k, relabeled: 0, total_labeled: k } }]);
    const api = new ApiClient('', fetch);

    return api.annotate(ids, 4).then((result) => {
      expect(calls).toHaveLength(1);
      const call = calls[0]!;
      expect(call.url).toBe('/api/annotations');
      expect(call.method).toBe('POST');
      const body = call.body as { assignments: { id: number; label: number }[]; source: string };
      expect(body.assignments).toHaveLength(k);
      expect(body.assignments.every((a) => a.label === 4)).toBe(true);
      expect(body.assignments.map((a) => a.id)).toEqual(ids);
      expect(body.source).toBe('ui');
      expect(result.accepted).toBe(k);
    });
  });

  it('surfaces server rejections as ApiError with status and detail', async () => {
    const reject = { status: 404, body: { detail: 'unknown sample id 999' } };
    const { fetch } = fakeFetch([reject, reject]);
    const api = new ApiClient('', fetch);
    await expect(api.annotate([999], 1)).rejects.toThrow(ApiError);
    await expect(api.annotate([999], 1)).rejects.toThrow(/unknown sample id 999/);
  });
});

describe('ApiClient.startTraining', () => {
  it('posts the user-set weights', async () => {
    const { calls, fetch } = fakeFetch([{ status: 200, body: { cycle: 3, status: 'started' } }]);
    const api = new ApiClient('', fetch);
    const resp = await api.startTraining({ epochs: 8, beta_kl: 3, beta_classifier: 100 });
    expect(resp.cycle).toBe(3);
    expect(calls[0]!.body).toEqual({ epochs: 8, beta_kl: 3, beta_classifier: 100 });
  });

  it('maps the busy response to ApiError(409)', async () => {
    const { fetch } = fakeFetch([{ status: 409, body: { status: 'training', cycle: 2 } }]);
    const api = new ApiClient('', fetch);
    const err = await api.startTraining({}).catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
  });
});

describe('openStream', () => {
  class FakeSocket {
    onmessage: ((ev: { data: unknown }) => void) | null = null;
    onclose: ((ev: unknown) => void) | null = null;
    closed = false;

    close(): void {
      this.closed = true;
      this.onclose?.({});
    }

    emit(msg: unknown): void {
      this.onmessage?.({ data: JSON.stringify(msg) });
    }
  }

  it('delivers parsed messages in order and closes cleanly', () => {
    const socket = new FakeSocket();
    const seen: StreamMessage[] = [];
    let closed = 0;
    const handle = openStream(
      'ws://test/api/stream',
      (m) => seen.push(m),
      () => closed++,
      () => socket,
    );

    socket.emit({ type: 'epoch', cycle: 1, epoch: 1, loss: {}, points: [[5, 0.1, 0.2]] });
    socket.emit({ type: 'done', cycle: 1 });
    handle.close();

    expect(seen.map((m) => m.type)).toEqual(['epoch', 'done']);
    expect((seen[0] as { points: number[][] }).points[0]).toEqual([5, 0.1, 0.2]);
    expect(socket.closed).toBe(true);
    expect(closed).toBe(1);
  });
});

describe('streamUrl', () => {
  it('matches the page origin and upgrades scheme with https', () => {
    expect(streamUrl({ protocol: 'http:', host: 'localhost:8421' })).toBe('ws://localhost:8421/api/stream');
    expect(streamUrl({ protocol: 'https:', host: 'loom.example' })).toBe('wss://loom.example/api/stream');
  });
});
