/** Thin client over the server's five endpoints. */

import type {
  AnnotateResult,
  PointsPayload,
  StatusPayload,
  StreamMessage,
  TrainRequest,
  TrainStarted,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async fetchPoints(): Promise<PointsPayload> {
    return this.request('GET', '/api/points');
  }

  async fetchStatus(): Promise<StatusPayload> {
    return this.request('GET', '/api/status');
  }

  /** One atomic call carrying every (id -> label) assignment of the lasso. */
  async annotate(ids: Iterable<number>, label: number): Promise<AnnotateResult> {
    const assignments = Array.from(ids, (id) => ({ id, label }));
    return this.request('POST', '/api/annotations', { assignments, source: 'ui' });
  }

  async startTraining(req: TrainRequest = {}): Promise<TrainStarted> {
    return this.request('POST', '/api/train', req);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { 'content-type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.base + path, init);
    const text = await resp.text();
    if (!resp.ok) {
      throw new ApiError(resp.status, detailOf(text));
    }
    return JSON.parse(text) as T;
  }
}

function detailOf(text: string): string {
  try {
    const parsed = JSON.parse(text) as { detail?: unknown; status?: unknown };
    if (typeof parsed.detail === 'string') return parsed.detail;
    if (typeof parsed.status === 'string') return parsed.status;
  } catch {
    // fall through to the raw body
  }
  return text;
}

export interface StreamHandle {
  close(): void;
}

interface WebSocketLike {
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
}

/**
 * Subscribes to the epoch stream. The server replays the latest frame on
 * connect, then pushes epoch/done/error messages in order.
 */
export function openStream(
  url: string,
  onMessage: (msg: StreamMessage) => void,
  onClose: () => void = () => {},
  factory: (url: string) => WebSocketLike = (u) => new WebSocket(u) as WebSocketLike,
): StreamHandle {
  const ws = factory(url);
  ws.onmessage = (ev) => {
    onMessage(JSON.parse(String(ev.data)) as StreamMessage);
  };
  ws.onclose = () => onClose();
  return { close: () => ws.close() };
}

/** ws:// address of the stream endpoint for the current page origin. */
export function streamUrl(location: { protocol: string; host: string }): string {
  const scheme = location.protocol === 'https:' ? 'wss' : 'ws';
  return `${scheme}://${location.host}/api/stream`;
}
