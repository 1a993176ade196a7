"""Minibatch training loop with per-epoch latent snapshots, unsupervised
pretraining, warm-start fine-tuning across cycles, and checkpointing.

Every source of randomness (shuffle order, reparameterization noise) is a
counter-based stream keyed by (seed, cycle, epoch, batch), so a run can be
interrupted, reloaded from a checkpoint, and resumed bit-for-bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn_core as nn
from .data_ingest import Dataset
from .dgm_model import EmbeddedPoints, LossBreakdown, LossWeights, Model, ModelConfig
from .nn_core import AdamState, NonFiniteLoss, ParamStore

CHECKPOINT_VERSION = 1


class EmptyDataset(ValueError):
    """Training requires at least one sample."""


class CheckpointError(RuntimeError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptManifest(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 128
    learning_rate: float = 5e-3
    weights: LossWeights = field(default_factory=lambda: LossWeights(beta_kl=3.0, beta_classifier=100.0))
    seed: int = 0
    snapshot_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta_kl": self.weights.beta_kl,
            "beta_classifier": self.weights.beta_classifier,
            "seed": self.seed,
            "snapshot_every": self.snapshot_every,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            learning_rate=d["learning_rate"],
            weights=LossWeights(beta_kl=d["beta_kl"], beta_classifier=d["beta_classifier"]),
            seed=d["seed"],
            snapshot_every=d["snapshot_every"],
        )


@dataclass(frozen=True)
class EpochSnapshot:
    """Full-dataset latent view after one completed epoch. Arrays are
    marked read-only so a snapshot can be shared across threads."""

    cycle: int
    epoch: int
    loss: LossBreakdown
    points: EmbeddedPoints
    wall_time: float

    def __post_init__(self):
        for arr in (self.points.sample_ids, self.points.mu, self.points.sigma, self.points.pred_class, self.points.confidence):
            arr.setflags(write=False)


def _epoch_mean(sums: dict[str, float], n: int, labeled: int, w: LossWeights) -> LossBreakdown:
    """Per-sample epoch means; total recombined so the Eq.-1 identity holds
    exactly even when some batches carry no labels."""
    recon = sums["reconst"] / n
    kl = sums["kl"] / n
    cls = sums["classifier"] / labeled if labeled else 0.0
    return LossBreakdown(
        total=recon + w.beta_kl * kl + w.beta_classifier * cls,
        reconstruction=recon,
        kl=kl,
        classifier=cls,
        labeled_count=labeled,
    )


def fit(
    model: Model,
    dataset: Dataset,
    config: TrainConfig,
    state: AdamState | None = None,
    on_epoch=None,
    cycle: int = 0,
    start_epoch: int = 0,
) -> tuple[AdamState, list[EpochSnapshot]]:
    """Run epochs start_epoch+1 .. config.epochs, mutating model params and
    optimizer state in place. Returns the state and emitted snapshots.

    `start_epoch` exists for checkpoint resume: epoch-keyed noise streams
    make the resumed run bitwise-identical to an uninterrupted one.
    """
    n = dataset.n
    if n == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if state is None:
        state = nn.init_adam(model.params, lr=config.learning_rate)
    onehot = dataset.one_hot()
    d = model.config.latent_dim
    snapshots: list[EpochSnapshot] = []

    for epoch in range(start_epoch + 1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = nn.stream_rng(config.seed, cycle, epoch).permutation(n)
        sums = {"reconst": 0.0, "kl": 0.0, "classifier": 0.0}
        labeled_total = 0
        for b_idx, lo in enumerate(range(0, n, config.batch_size)):
            idx = perm[lo : lo + config.batch_size]
            eps = nn.stream_rng(config.seed, cycle, epoch, b_idx).standard_normal((idx.size, d), dtype=np.float32)
            try:
                total, br = model.total_loss(dataset.images[idx], onehot[idx], dataset.label_mask[idx], config.weights, eps)
            except NonFiniteLoss as e:
                raise NonFiniteLoss(f"aborting: non-finite loss at cycle {cycle}, epoch {epoch}, batch {b_idx}") from e
            grads = nn.backward(total, model.params)
            nn.adam_step(model.params, grads, state)
            sums["reconst"] += br.reconstruction * idx.size
            sums["kl"] += br.kl * idx.size
            sums["classifier"] += br.classifier * br.labeled_count
            labeled_total += br.labeled_count

        if epoch % config.snapshot_every == 0 or epoch == config.epochs:
            snap = EpochSnapshot(
                cycle=cycle,
                epoch=epoch,
                loss=_epoch_mean(sums, n, labeled_total, config.weights),
                points=model.embed_means(dataset.images, dataset.sample_ids),
                wall_time=time.perf_counter() - t0,
            )
            snapshots.append(snap)
            if on_epoch is not None:
                on_epoch(snap)
    return state, snapshots


def pretrain_unsupervised(
    model: Model,
    dataset: Dataset,
    config: TrainConfig,
    state: AdamState | None = None,
    on_epoch=None,
) -> tuple[AdamState, list[EpochSnapshot]]:
    """fit() with labels hidden and the classifier term switched off; the
    classifier parameters come out bitwise-identical to how they went in."""
    unsup = replace(config, weights=replace(config.weights, beta_classifier=0.0))
    return fit(model, dataset.without_labels(), unsup, state=state, on_epoch=on_epoch, cycle=0)


# ---------------------------------------------------------------- checkpoints
#
# Layout: 4-byte little-endian manifest length, UTF-8 JSON manifest, then one
# contiguous little-endian float32 blob. The manifest maps every parameter and
# Adam moment to (shape, offset, nbytes) within the blob.


def _blob_entries(arrays: list[tuple[str, np.ndarray]], offset0: int):
    entries, chunks, offset = [], [], offset0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return entries, chunks, offset


def save_checkpoint(path, model: Model, state: AdamState, train_config: TrainConfig, extra: dict | None = None) -> None:
    params = [(name, t.data) for name, t in model.params.items()]
    m_arrays = [(name, state.m[name]) for name, _ in params]
    v_arrays = [(name, state.v[name]) for name, _ in params]

    p_entries, p_chunks, end = _blob_entries(params, 0)
    m_entries, m_chunks, end = _blob_entries(m_arrays, end)
    v_entries, v_chunks, end = _blob_entries(v_arrays, end)

    manifest = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict(),
        "extra": extra or {},
        "params": p_entries,
        "adam": {
            "lr": state.lr,
            "beta1": state.b1,
            "beta2": state.b2,
            "eps": state.eps,
            "t": state.t,
            "m": m_entries,
            "v": v_entries,
        },
        "blob_nbytes": end,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(head).to_bytes(4, "little"))
        f.write(head)
        for chunk in p_chunks + m_chunks + v_chunks:
            f.write(chunk)


@dataclass
class LoadedCheckpoint:
    model: Model
    state: AdamState
    train_config: TrainConfig
    extra: dict


def _read_entries(entries, blob: bytes, seen: list) -> dict[str, np.ndarray]:
    out = {}
    for e in entries:
        shape = tuple(e["shape"])
        want = int(np.prod(shape)) * 4 if shape else 4
        if e["nbytes"] != want:
            raise CorruptManifest(f"{e['name']}: {e['nbytes']} bytes for shape {shape}")
        lo, hi = e["offset"], e["offset"] + e["nbytes"]
        if lo < 0 or hi > len(blob):
            raise CorruptManifest(f"{e['name']}: range [{lo}, {hi}) outside blob of {len(blob)} bytes")
        seen.append((lo, hi, e["name"]))
        out[e["name"]] = np.frombuffer(blob[lo:hi], dtype="<f4").reshape(shape).copy()
    return out


def load_checkpoint(path) -> LoadedCheckpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise CorruptManifest("file too short for a manifest header")
    head_len = int.from_bytes(raw[:4], "little")
    if len(raw) < 4 + head_len:
        raise CorruptManifest("truncated manifest")
    try:
        manifest = json.loads(raw[4 : 4 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptManifest(f"manifest is not valid JSON: {e}") from e
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {manifest.get('version')!r}, expected {CHECKPOINT_VERSION}")

    blob = raw[4 + head_len :]
    if len(blob) != manifest["blob_nbytes"]:
        raise CorruptManifest(f"blob is {len(blob)} bytes, manifest promises {manifest['blob_nbytes']}")

    try:
        model_config = ModelConfig.from_dict(manifest["model_config"])
        train_config = TrainConfig.from_dict(manifest["train_config"])
        adam = manifest["adam"]
        seen: list = []
        param_arrays = _read_entries(manifest["params"], blob, seen)
        m_arrays = _read_entries(adam["m"], blob, seen)
        v_arrays = _read_entries(adam["v"], blob, seen)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CorruptManifest(f"malformed manifest: {e}") from e

    seen.sort()
    for (lo1, hi1, n1), (lo2, _, n2) in zip(seen, seen[1:]):
        if lo2 < hi1:
            raise CorruptManifest(f"overlapping blob ranges: {n1} and {n2}")

    store = ParamStore()
    for name, _, _ in model_config.param_spec():
        if name not in param_arrays:
            raise CorruptManifest(f"missing parameter {name}")
        store.add(name, param_arrays[name])
    state = AdamState(
        lr=adam["lr"],
        b1=adam["beta1"],
        b2=adam["beta2"],
        eps=adam["eps"],
        t=adam["t"],
        m=m_arrays,
        v=v_arrays,
    )
    return LoadedCheckpoint(
        model=Model(model_config, params=store),
        state=state,
        train_config=train_config,
        extra=manifest.get("extra", {}),
    )
