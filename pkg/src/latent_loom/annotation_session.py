"""Session façade for the annotate-retrain loop: holds the evolving label
state, accepts (and logs) annotation events, runs warm-start training
cycles on a worker thread, and fans completed-epoch snapshots out to any
number of stream consumers.

Annotations are an append-only event log; the live label mask is always
the left fold of that log over the dataset's initial labels, which is what
makes persist/restore an exact replay.
"""

from __future__ import annotations

import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import nn_core as nn
from .data_ingest import Dataset, N_CLASSES
from .dgm_model import EmbeddedPoints, LossBreakdown, LossWeights, Model, ModelConfig
from .nn_core import NonFiniteLoss
from .trainer import EpochSnapshot, TrainConfig, fit, load_checkpoint, save_checkpoint

EVENT_SOURCES = ("ui", "cli", "oracle")

# Short default budget: a cycle should give fast visible movement, not
# convergence; callers override for long runs.
DEFAULT_CYCLE_CONFIG = TrainConfig(
    epochs=5,
    batch_size=32,
    learning_rate=5e-3,
    weights=LossWeights(beta_kl=3.0, beta_classifier=100.0),
    seed=0,
    snapshot_every=1,
)

CHECKPOINT_FILE = "session.ckpt"
LOG_FILE = "annotations.ndjson"
CONFIG_FILE = "session.json"


class UnknownSampleId(ValueError):
    pass


class ClassOutOfRange(ValueError):
    pass


class AlreadyTraining(RuntimeError):
    pass


class CorruptLog(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnotationEvent:
    assignments: tuple[tuple[int, int], ...]  # (sample_id, class)
    source: str
    timestamp: float

    def __post_init__(self):
        if self.source not in EVENT_SOURCES:
            raise ValueError(f"source must be one of {EVENT_SOURCES}, got {self.source!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"assignments": [[int(i), int(c)] for i, c in self.assignments], "source": self.source, "timestamp": self.timestamp}
        )

    @staticmethod
    def from_json(line: str) -> "AnnotationEvent":
        d = json.loads(line)
        return AnnotationEvent(
            assignments=tuple((int(i), int(c)) for i, c in d["assignments"]),
            source=d["source"],
            timestamp=float(d["timestamp"]),
        )


@dataclass(frozen=True)
class AnnotationSummary:
    accepted: int
    relabeled: int
    total_labeled: int


@dataclass(frozen=True)
class PointsView:
    """Consistent (never torn) view: coordinates from one completed epoch,
    labels from the live annotation state at construction time."""

    cycle: int
    epoch: int
    points: EmbeddedPoints
    labels: np.ndarray  # (n,) int16, aligned with points.sample_ids
    label_mask: np.ndarray  # (n,) bool
    training: bool


# ------------------------------------------------------------------ streaming


class Subscription:
    """One consumer's bounded snapshot queue. Intermediate epochs are
    dropped oldest-first beyond capacity; terminal items never are."""

    def __init__(self, hub: "SnapshotHub", capacity: int):
        self._hub = hub
        self._capacity = capacity
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._closed = False

    def _offer(self, item, terminal: bool):
        with self._cond:
            if self._closed:
                return
            if len(self._items) >= self._capacity:
                for i, (kind, _) in enumerate(self._items):
                    if kind == "epoch":
                        del self._items[i]
                        break
                else:
                    if not terminal:
                        return  # queue full of terminals; drop the newcomer
            self._items.append(item)
            self._cond.notify()

    def get(self, timeout: float | None = None):
        """Next item, or None on timeout/close."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._items:
                if self._closed:
                    return None
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return None
                self._cond.wait(remaining)
            return self._items.popleft()

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._hub._drop(self)


class SnapshotHub:
    """Single-producer fan-out of training progress items.

    Items are ("epoch", EpochSnapshot), ("done", {cycle}), or
    ("error", {cycle, epoch, message}).
    """

    def __init__(self, capacity: int = 64):
        self._capacity = capacity
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()

    def subscribe(self) -> Subscription:
        sub = Subscription(self, self._capacity)
        with self._lock:
            self._subs.append(sub)
        return sub

    def _drop(self, sub: Subscription):
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    def _broadcast(self, item, terminal: bool):
        with self._lock:
            subs = list(self._subs)
        for sub in subs:
            sub._offer(item, terminal)

    def publish_epoch(self, snap: EpochSnapshot):
        self._broadcast(("epoch", snap), terminal=False)

    def publish_done(self, cycle: int):
        self._broadcast(("done", {"cycle": cycle}), terminal=True)

    def publish_error(self, cycle: int, epoch: int, message: str):
        self._broadcast(("error", {"cycle": cycle, "epoch": epoch, "message": message}), terminal=True)


# ------------------------------------------------------------------ session


class Session:
    """Serialized mutation façade over (dataset labels, params, cycle)."""

    def __init__(
        self,
        dataset: Dataset,
        model_config: ModelConfig | None = None,
        train_config: TrainConfig | None = None,
        seed: int = 0,
        model: Model | None = None,
        cycle: int = 0,
    ):
        self.base_dataset = dataset
        self.model_config = model_config or (model.config if model else ModelConfig())
        self.train_config = train_config or replace(DEFAULT_CYCLE_CONFIG, seed=seed)
        self.seed = seed
        self.model = model or Model(self.model_config, seed=seed)
        self.hub = SnapshotHub()

        self._labels = dataset.labels.copy()
        self._mask = dataset.label_mask.copy()
        self._pos = {int(sid): i for i, sid in enumerate(dataset.sample_ids)}
        self._log: list[AnnotationEvent] = []
        self._lock = threading.RLock()
        self._cycle = cycle
        self._training = False
        self._worker: threading.Thread | None = None
        self._latest = self._initial_snapshot()

    # -- views ---------------------------------------------------------------

    def _initial_snapshot(self) -> EpochSnapshot:
        points = self.model.embed_means(self.base_dataset.images, self.base_dataset.sample_ids)
        loss = LossBreakdown(0.0, 0.0, 0.0, 0.0, int(self._mask.sum()))
        return EpochSnapshot(cycle=self._cycle, epoch=0, loss=loss, points=points, wall_time=0.0)

    @property
    def cycle(self) -> int:
        return self._cycle

    @property
    def training(self) -> bool:
        return self._training

    @property
    def n(self) -> int:
        return self.base_dataset.n

    @property
    def labeled_count(self) -> int:
        with self._lock:
            return int(self._mask.sum())

    @property
    def annotation_log(self) -> tuple[AnnotationEvent, ...]:
        with self._lock:
            return tuple(self._log)

    def latest_snapshot(self) -> EpochSnapshot:
        with self._lock:
            return self._latest

    def current_points(self) -> PointsView:
        with self._lock:
            snap = self._latest
            return PointsView(
                cycle=snap.cycle,
                epoch=snap.epoch,
                points=snap.points,
                labels=self._labels.copy(),
                label_mask=self._mask.copy(),
                training=self._training,
            )

    def labeled_dataset(self) -> Dataset:
        """Frozen copy of the dataset under the current label state."""
        with self._lock:
            return self.base_dataset.replace_labels(self._labels, self._mask)

    # -- annotation ------------------------------------------------------------

    def apply_annotations(self, event: AnnotationEvent) -> AnnotationSummary:
        for sid, cls in event.assignments:
            if sid not in self._pos:
                raise UnknownSampleId(f"sample id {sid} not in session dataset")
            if not (0 <= cls < N_CLASSES):
                raise ClassOutOfRange(f"class {cls} outside [0, {N_CLASSES})")
        with self._lock:
            accepted = relabeled = 0
            for sid, cls in event.assignments:
                i = self._pos[sid]
                if not self._mask[i]:
                    accepted += 1
                elif self._labels[i] != cls:
                    relabeled += 1
                self._labels[i] = cls
                self._mask[i] = True
            self._log.append(event)
            return AnnotationSummary(accepted=accepted, relabeled=relabeled, total_labeled=int(self._mask.sum()))

    def replay_labels(self) -> tuple[np.ndarray, np.ndarray]:
        """Fold the annotation log over the initial label state; by
        construction this must equal the live state (replay equivalence)."""
        labels = self.base_dataset.labels.copy()
        mask = self.base_dataset.label_mask.copy()
        with self._lock:
            events = list(self._log)
        for e in events:
            for sid, cls in e.assignments:
                i = self._pos[sid]
                labels[i] = cls
                mask[i] = True
        return labels, mask

    # -- training cycles ---------------------------------------------------------

    def trigger_update(self, override: TrainConfig | None = None) -> int:
        with self._lock:
            if self._training:
                raise AlreadyTraining(f"cycle {self._cycle} is still running")
            self._cycle += 1
            self._training = True
            cycle = self._cycle
            cfg = override or self.train_config
            ds = self.base_dataset.replace_labels(self._labels, self._mask)
        worker = threading.Thread(target=self._run_cycle, args=(ds, cfg, cycle), name=f"cycle-{cycle}", daemon=True)
        self._worker = worker
        worker.start()
        return cycle

    def _run_cycle(self, ds: Dataset, cfg: TrainConfig, cycle: int):
        def on_epoch(snap: EpochSnapshot):
            with self._lock:
                self._latest = snap
            self.hub.publish_epoch(snap)

        try:
            fit(self.model, ds, cfg, on_epoch=on_epoch, cycle=cycle)
        except Exception as e:  # NonFiniteLoss or anything else: report, stay usable
            with self._lock:
                self._training = False
            self.hub.publish_error(cycle, epoch=self._latest.epoch, message=str(e))
            return
        with self._lock:
            self._training = False
        self.hub.publish_done(cycle)

    def wait_idle(self, timeout: float | None = None) -> bool:
        worker = self._worker
        if worker is not None:
            worker.join(timeout)
        return not self._training

    # -- persistence ----------------------------------------------------------------

    def persist(self, dir_path) -> None:
        os.makedirs(dir_path, exist_ok=True)
        with self._lock:
            events = list(self._log)
            cycle = self._cycle
            state = nn.init_adam(self.model.params, lr=self.train_config.learning_rate)
            save_checkpoint(
                os.path.join(dir_path, CHECKPOINT_FILE),
                self.model,
                state,
                self.train_config,
                extra={"cycle": cycle, "seed": self.seed},
            )
        with open(os.path.join(dir_path, LOG_FILE), "w", encoding="utf-8") as f:
            for e in events:
                f.write(e.to_json() + "\n")
        with open(os.path.join(dir_path, CONFIG_FILE), "w", encoding="utf-8") as f:
            json.dump(
                {"model_config": self.model_config.to_dict(), "train_config": self.train_config.to_dict(), "seed": self.seed, "cycle": cycle},
                f,
                indent=2,
            )

    @staticmethod
    def restore(dir_path, dataset: Dataset) -> "Session":
        loaded = load_checkpoint(os.path.join(dir_path, CHECKPOINT_FILE))
        with open(os.path.join(dir_path, CONFIG_FILE), encoding="utf-8") as f:
            meta = json.load(f)
        session = Session(
            dataset,
            model_config=loaded.model.config,
            train_config=loaded.train_config,
            seed=meta["seed"],
            model=loaded.model,
            cycle=meta["cycle"],
        )
        log_path = os.path.join(dir_path, LOG_FILE)
        if os.path.exists(log_path):
            with open(log_path, encoding="utf-8") as f:
                for idx, line in enumerate(f):
                    if not line.strip():
                        continue
                    try:
                        event = AnnotationEvent.from_json(line)
                        session.apply_annotations(event)
                    except (ValueError, KeyError, TypeError) as e:
                        raise CorruptLog(f"annotation log record {idx} is corrupt: {e}") from e
        return session
