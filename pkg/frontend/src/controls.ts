/** Sidebar: class palette, training sliders, status and loss readouts. */

import type { ApiClient } from './api.js';
import { ApiError } from './api.js';
import { CLASS_PALETTE } from './colors.js';
import type { AppStore } from './store.js';
import type { LossReadout } from './types.js';

export interface ControlsHooks {
  /** called after any state change that needs a repaint */
  onChange(): void;
}

export class Controls {
  private trainButton: HTMLButtonElement;
  private epochsInput: HTMLInputElement;
  private betaKlInput: HTMLInputElement;
  private betaClsInput: HTMLInputElement;
  private statusLine: HTMLElement;
  private lossLine: HTMLElement;
  private noticeLine: HTMLElement;
  private classButtons: HTMLButtonElement[] = [];

  constructor(
    root: HTMLElement,
    private readonly store: AppStore,
    private readonly api: ApiClient,
    private readonly hooks: ControlsHooks,
  ) {
    root.innerHTML = `
      <h1>latent loom</h1>
      <div class="status" data-role="status"></div>
      <div class="loss" data-role="loss"></div>
      <section>
        <h2>annotate selection</h2>
        <div class="palette" data-role="palette"></div>
        <p class="hint">lasso-drag on the canvas, then pick a class (keys 0&ndash;9); esc clears</p>
      </section>
      <section>
        <h2>training</h2>
        <label>epochs <input data-role="epochs" type="number" min="1" value="5"></label>
        <label>&beta;<sub>KL</sub> <input data-role="beta-kl" type="number" min="0" step="0.5" value="3"></label>
        <label>&beta;<sub>cls</sub> <input data-role="beta-cls" type="number" min="0" step="1" value="100"></label>
        <button data-role="train">train</button>
      </section>
      <div class="notice" data-role="notice"></div>
    `;
    this.statusLine = root.querySelector('[data-role=status]')!;
    this.lossLine = root.querySelector('[data-role=loss]')!;
    this.noticeLine = root.querySelector('[data-role=notice]')!;
    this.epochsInput = root.querySelector('[data-role=epochs]')!;
    this.betaKlInput = root.querySelector('[data-role=beta-kl]')!;
    this.betaClsInput = root.querySelector('[data-role=beta-cls]')!;
    this.trainButton = root.querySelector('[data-role=train]')!;

    const palette = root.querySelector('[data-role=palette]')!;
    CLASS_PALETTE.forEach((color, cls) => {
      const btn = document.createElement('button');
      btn.textContent = String(cls);
      btn.style.background = color;
      btn.title = `label selection as ${cls}`;
      btn.addEventListener('click', () => void this.annotate(cls));
      palette.appendChild(btn);
      this.classButtons.push(btn);
    });

    this.trainButton.addEventListener('click', () => void this.train());
    window.addEventListener('keydown', (ev) => {
      if (ev.target instanceof HTMLInputElement) return;
      if (ev.key >= '0' && ev.key <= '9') void this.annotate(Number(ev.key));
      if (ev.key === 'Escape') {
        this.store.clearSelection();
        this.refresh();
        this.hooks.onChange();
      }
    });
  }

  async annotate(cls: number): Promise<void> {
    await this.store.annotateSelection(cls, this.api);
    this.refresh();
    this.hooks.onChange();
  }

  async train(): Promise<void> {
    this.store.training = true;
    this.refresh();
    try {
      await this.api.startTraining({
        epochs: Math.max(1, Math.round(Number(this.epochsInput.value) || 5)),
        beta_kl: Math.max(0, Number(this.betaKlInput.value) || 0),
        beta_classifier: Math.max(0, Number(this.betaClsInput.value) || 0),
      });
      this.store.notice = { kind: 'info', text: 'training started' };
    } catch (err) {
      // 409 just means a cycle is already running: keep controls disabled
      if (!(err instanceof ApiError)) throw err;
      if (err.status !== 409) {
        this.store.training = false;
        this.store.notice = { kind: 'error', text: err.message };
      }
    }
    this.refresh();
  }

  showLoss(loss: LossReadout): void {
    this.lossLine.textContent =
      `loss ${loss.total.toFixed(2)} | reconst ${loss.reconst.toFixed(2)}` +
      ` | kl ${loss.kl.toFixed(3)} | cls ${loss.classifier.toFixed(3)} (${loss.labeled_count} labeled)`;
  }

  refresh(): void {
    const s = this.store;
    const labeled = Array.from(s.points.values()).filter((p) => p.label !== null).length;
    this.statusLine.textContent =
      `cycle ${s.cycle} epoch ${s.epoch} | ${s.points.size} points, ${labeled} labeled` +
      ` | ${s.selection.size} selected${s.training ? ' | training…' : ''}` +
      `${s.latentDim === 3 ? ' | 3D session: showing first two latent axes' : ''}`;
    this.trainButton.disabled = s.training;
    for (const btn of this.classButtons) btn.disabled = s.selection.size === 0;
    this.noticeLine.textContent = s.notice?.text ?? '';
    this.noticeLine.className = `notice ${s.notice?.kind ?? ''}`;
  }
}
