/** Bootstrap: load points, open the stream, wire canvas interactions. */

import { Animator, frameFromMessage, type Frame } from './animation.js';
import { ApiClient, openStream, streamUrl } from './api.js';
import { Camera } from './camera.js';
import type { Vec2 } from './geometry.js';
import { Renderer } from './renderer.js';
import { AppStore } from './store.js';
import { Controls } from './controls.js';
import type { PointsPayload } from './types.js';

function frameFromPayload(payload: PointsPayload): Frame {
  const positions = new Map<number, readonly number[]>();
  for (const p of payload.points) positions.set(p.id, p.mu);
  return { cycle: payload.cycle, epoch: payload.epoch, positions };
}

async function boot(): Promise<void> {
  const canvas = document.querySelector<HTMLCanvasElement>('#scatter')!;
  const sidebar = document.querySelector<HTMLElement>('#sidebar')!;
  const api = new ApiClient();
  const store = new AppStore();

  const dpr = window.devicePixelRatio || 1;
  const camera = new Camera(canvas.clientWidth, canvas.clientHeight);
  const ctx = canvas.getContext('2d')!;
  const renderer = new Renderer(ctx, camera);

  const sizeCanvas = (): void => {
    canvas.width = canvas.clientWidth * dpr;
    canvas.height = canvas.clientHeight * dpr;
    camera.viewWidth = canvas.clientWidth;
    camera.viewHeight = canvas.clientHeight;
    ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
  };
  sizeCanvas();
  window.addEventListener('resize', sizeCanvas);

  const initial = await api.fetchPoints();
  store.loadPoints(initial);
  const status = await api.fetchStatus();
  store.training = status.training;
  store.latentDim = status.config?.latent_dim ?? 2;

  const animator = new Animator(frameFromPayload(initial));
  const first = frameFromPayload(initial).positions;
  camera.fitBounds(
    Array.from(first.values(), (mu) => mu[0]!),
    Array.from(first.values(), (mu) => mu[1]!),
  );

  let lasso: Vec2[] | null = null;
  let hoverId: number | null = null;
  const controls = new Controls(sidebar, store, api, { onChange: () => undefined });

  const refreshAfterCycle = async (): Promise<void> => {
    const payload = await api.fetchPoints();
    store.loadPoints(payload);
    const idle = await api.fetchStatus();
    store.training = idle.training;
    controls.refresh();
  };

  openStream(
    streamUrl(window.location),
    (msg) => {
      if (msg.type === 'epoch') {
        store.cycle = msg.cycle;
        store.epoch = msg.epoch;
        store.training = true;
        animator.push(frameFromMessage(msg));
        controls.showLoss(msg.loss);
      } else if (msg.type === 'done') {
        void refreshAfterCycle();
      } else {
        store.training = false;
        store.notice = { kind: 'error', text: `training failed at epoch ${msg.epoch}: ${msg.message}` };
      }
      controls.refresh();
    },
    () => {
      store.notice = { kind: 'error', text: 'stream closed; reload to reconnect' };
      controls.refresh();
    },
  );

  // -- canvas interactions: lasso drag, wheel zoom, middle/shift-drag pan --
  let panning = false;
  let last: Vec2 = [0, 0];
  canvas.addEventListener('pointerdown', (ev) => {
    canvas.setPointerCapture(ev.pointerId);
    last = [ev.offsetX, ev.offsetY];
    if (ev.button === 1 || ev.shiftKey) {
      panning = true;
    } else {
      lasso = [[ev.offsetX, ev.offsetY]];
    }
  });
  canvas.addEventListener('pointermove', (ev) => {
    if (panning) {
      camera.panByPixels(ev.offsetX - last[0], ev.offsetY - last[1]);
      last = [ev.offsetX, ev.offsetY];
    } else if (lasso !== null) {
      lasso.push([ev.offsetX, ev.offsetY]);
    } else {
      hoverId = renderer.hits.nearest(ev.offsetX, ev.offsetY, 8);
    }
  });
  canvas.addEventListener('pointerup', (ev) => {
    canvas.releasePointerCapture(ev.pointerId);
    if (panning) {
      panning = false;
      return;
    }
    if (lasso !== null) {
      const positions = animator.positions(performance.now());
      const screenPts = Array.from(positions, ([id, pos]) => {
        const [x, y] = camera.dataToScreen([pos.x, pos.y]);
        return { id, x, y };
      });
      store.applyLasso(lasso, screenPts);
      lasso = null;
      controls.refresh();
    }
  });
  canvas.addEventListener('wheel', (ev) => {
    ev.preventDefault();
    camera.zoomAt([ev.offsetX, ev.offsetY], Math.exp(-ev.deltaY * 0.0015));
  });

  controls.refresh();
  const paint = (now: number): void => {
    renderer.draw(store, { positions: animator.positions(now), lasso, hoverId });
    requestAnimationFrame(paint);
  };
  requestAnimationFrame(paint);
}

void boot();
