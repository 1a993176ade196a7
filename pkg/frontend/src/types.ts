/** Wire types: a 1:1 mirror of the server's JSON contract. */

export interface PointRecord {
  id: number;
  /** posterior mean, 2 or 3 components */
  mu: number[];
  sigma: number[];
  /** annotated class, or null when the sample is unlabeled */
  label: number | null;
  /** classifier argmax on mu */
  pred: number;
  /** classifier confidence in [0, 1] */
  conf: number;
}

export interface PointsPayload {
  cycle: number;
  epoch: number;
  points: PointRecord[];
}

export interface AnnotateResult {
  accepted: number;
  relabeled: number;
  total_labeled: number;
}

export interface TrainRequest {
  epochs?: number;
  beta_kl?: number;
  beta_classifier?: number;
}

export interface TrainStarted {
  cycle: number;
  status: 'started';
}

export interface TrainConfigInfo {
  latent_dim: number;
  epochs: number;
  batch_size: number;
  learning_rate: number;
  beta_kl: number;
  beta_classifier: number;
  seed: number;
}

export interface StatusPayload {
  ready: boolean;
  training: boolean;
  cycle: number;
  epoch: number;
  labeled: number;
  n: number;
  config: TrainConfigInfo | null;
}

export interface LossReadout {
  total: number;
  reconst: number;
  kl: number;
  classifier: number;
  labeled_count: number;
}

/** Compact per-epoch frame: one [id, ...mu] row per point. */
export interface EpochMessage {
  type: 'epoch';
  cycle: number;
  epoch: number;
  loss: LossReadout;
  points: number[][];
}

export interface DoneMessage {
  type: 'done';
  cycle: number;
}

export interface ErrorMessage {
  type: 'error';
  cycle: number;
  epoch: number;
  message: string;
}

export type StreamMessage = EpochMessage | DoneMessage | ErrorMessage;
