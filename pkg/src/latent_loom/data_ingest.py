"""MNIST-style IDX files, pixel normalization, one-hot labels, and the
stratified subsets the experiments train on.

Labels can be partially absent: a sample without a label keeps a presence
mask of False rather than any sentinel class value.
"""

from __future__ import annotations

import gzip
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn_core import stream_rng

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
N_CLASSES = 10

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    """Malformed IDX container."""


class BadMagic(IdxFormatError):
    pass


class Truncated(IdxFormatError):
    pass


class CountMismatch(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class EmptyClassWarning(UserWarning):
    """A class received zero samples in a stratified draw."""


@dataclass(frozen=True)
class RawIdxFile:
    """Validated IDX header plus payload bytes."""

    magic: int
    dims: tuple[int, ...]
    payload: np.ndarray  # uint8, flat

    @property
    def count(self) -> int:
        return self.dims[0]


def parse_idx(data: bytes) -> RawIdxFile:
    """Parse an IDX byte buffer (unsigned-byte element type only)."""
    if len(data) < 4:
        raise Truncated("missing magic word")
    magic = struct.unpack(">I", data[:4])[0]
    if magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise BadMagic(f"unknown magic {magic:#010x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise Truncated("missing dimension sizes")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    size = int(np.prod(dims))
    body = data[header_len:]
    if len(body) < size:
        raise Truncated(f"payload has {len(body)} bytes, dims require {size}")
    if len(body) > size:
        raise IdxFormatError(f"{len(body) - size} trailing bytes after payload")
    return RawIdxFile(magic=magic, dims=tuple(int(d) for d in dims), payload=np.frombuffer(body, dtype=np.uint8))


def read_idx_file(path: str | Path) -> RawIdxFile:
    """Read an IDX file from disk, transparently gunzipping *.gz."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


@dataclass(frozen=True)
class Dataset:
    """Images in [0, 1] with optionally present integer class labels."""

    images: np.ndarray  # (n, h, w) float32
    labels: np.ndarray  # (n,) int16, meaningful only where label_mask
    label_mask: np.ndarray  # (n,) bool
    sample_ids: np.ndarray  # (n,) int64, unique and stable

    def __post_init__(self):
        n = self.images.shape[0]
        if not (self.labels.shape == self.label_mask.shape == self.sample_ids.shape == (n,)):
            raise CountMismatch(f"field lengths disagree for {n} images")
        if len(np.unique(self.sample_ids)) != n:
            raise ValueError("sample_ids are not unique")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def labeled_count(self) -> int:
        return int(self.label_mask.sum())

    def one_hot(self) -> np.ndarray:
        """(n, 10) float32; all-zero rows for unlabeled samples."""
        out = np.zeros((self.n, N_CLASSES), dtype=np.float32)
        idx = np.flatnonzero(self.label_mask)
        out[idx, self.labels[idx]] = 1.0
        return out

    def replace_labels(self, labels: np.ndarray, label_mask: np.ndarray) -> "Dataset":
        """New Dataset sharing image storage with a different label state."""
        return Dataset(
            images=self.images,
            labels=np.asarray(labels, dtype=np.int16).copy(),
            label_mask=np.asarray(label_mask, dtype=bool).copy(),
            sample_ids=self.sample_ids,
        )

    def without_labels(self) -> "Dataset":
        return self.replace_labels(np.zeros(self.n, dtype=np.int16), np.zeros(self.n, dtype=bool))

    def take(self, positions: np.ndarray) -> "Dataset":
        return Dataset(
            images=self.images[positions],
            labels=self.labels[positions].copy(),
            label_mask=self.label_mask[positions].copy(),
            sample_ids=self.sample_ids[positions].copy(),
        )


def load_dataset(image_file: RawIdxFile, label_file: RawIdxFile) -> Dataset:
    """Combine parsed image and label files into a normalized Dataset."""
    if image_file.magic != IMAGES_MAGIC:
        raise BadMagic(f"expected an image file, got magic {image_file.magic}")
    if label_file.magic != LABELS_MAGIC:
        raise BadMagic(f"expected a label file, got magic {label_file.magic}")
    if image_file.count != label_file.count:
        raise CountMismatch(f"{image_file.count} images vs {label_file.count} labels")
    labels = label_file.payload.astype(np.int16)
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise LabelOutOfRange(f"labels outside 0..{N_CLASSES - 1}")
    n, h, w = image_file.dims
    images = image_file.payload.reshape(n, h, w).astype(np.float32) / np.float32(255.0)
    return Dataset(
        images=images,
        labels=labels,
        label_mask=np.ones(n, dtype=bool),
        sample_ids=np.arange(n, dtype=np.int64),
    )


def load_mnist(data_dir: str | Path, split: str = "train") -> Dataset:
    """Load one MNIST split from a directory of IDX files (plain or .gz)."""
    names = {
        "train": (TRAIN_IMAGES, TRAIN_LABELS),
        "test": (TEST_IMAGES, TEST_LABELS),
    }
    if split not in names:
        raise ValueError(f"split must be train or test, got {split!r}")
    data_dir = Path(data_dir)
    files = []
    for base in names[split]:
        plain, gz = data_dir / base, data_dir / (base + ".gz")
        if plain.exists():
            files.append(plain)
        elif gz.exists():
            files.append(gz)
        else:
            raise FileNotFoundError(f"{base}[.gz] not found in {data_dir}")
    return load_dataset(read_idx_file(files[0]), read_idx_file(files[1]))


def _stratified_pick(labels: np.ndarray, mask: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Positions of a per-class round(fraction * count) draw, sorted ascending."""
    picked: list[np.ndarray] = []
    for cls in range(N_CLASSES):
        pool = np.flatnonzero(mask & (labels == cls))
        if pool.size == 0:
            continue
        k = int(np.floor(fraction * pool.size + 0.5))
        if k == 0:
            if fraction > 0:
                warnings.warn(f"class {cls} receives 0 of {pool.size} samples", EmptyClassWarning)
            continue
        rng = stream_rng(seed, cls)
        picked.append(rng.choice(pool, size=k, replace=False))
    if not picked:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(picked)).astype(np.int64)


def subsample_stratified(d: Dataset, fraction: float, seed: int) -> Dataset:
    """Per-class uniform subsample keeping class proportions within one sample."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not d.label_mask.all():
        raise ValueError("stratified subsampling needs a fully labeled dataset")
    return d.take(_stratified_pick(d.labels, d.label_mask, fraction, seed))


def strip_labels(d: Dataset, keep_fraction: float, seed: int) -> Dataset:
    """Keep labels on a stratified keep_fraction of samples, drop the rest."""
    if not 0 <= keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    if keep_fraction == 1.0:
        return d.replace_labels(d.labels, d.label_mask)
    if keep_fraction == 0.0:
        return d.without_labels()
    keep = _stratified_pick(d.labels, d.label_mask, keep_fraction, seed)
    mask = np.zeros(d.n, dtype=bool)
    mask[keep] = True
    return d.replace_labels(d.labels, mask)


def dataset_to_idx_bytes(d: Dataset) -> tuple[bytes, bytes]:
    """Serialize back to IDX image/label buffers (requires full labels)."""
    if not d.label_mask.all():
        raise ValueError("cannot serialize a partially labeled dataset to IDX")
    n, h, w = d.images.shape
    pixels = np.rint(d.images * 255.0).astype(np.uint8)
    img = struct.pack(">IIII", IMAGES_MAGIC, n, h, w) + pixels.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, n) + d.labels.astype(np.uint8).tobytes()
    return img, lab


def synthetic_blobs(n_per_class: int = 100, n_classes: int = 2, seed: int = 0, size: int = 28, labeled: bool = False) -> Dataset:
    """Toy image dataset: one soft Gaussian blob per image, blob position
    determined by class. Visually trivial to separate; useful for fast
    end-to-end session tests and demos without MNIST."""
    if not 1 <= n_classes <= 4:
        raise ValueError("blob classes form a 2x2 position grid; n_classes must be 1..4")
    rng = stream_rng(seed, 941)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo, hi = size * 0.3, size * 0.7
    centers = [
        (lo + (hi - lo) * (i // 2), lo + (hi - lo) * (i % 2)) for i in range(n_classes)
    ]
    images = np.empty((n_per_class * n_classes, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(n_classes), n_per_class).astype(np.int16)
    for row, cls in enumerate(labels):
        cy, cx = centers[cls]
        jy, jx = rng.normal(0.0, size / 24.0, size=2)
        img = np.exp(-(((yy - cy - jy) ** 2 + (xx - cx - jx) ** 2) / (2 * (size / 9.0) ** 2)))
        img += rng.normal(0.0, 0.02, size=img.shape)
        images[row] = np.clip(img, 0.0, 1.0)
    n = labels.size
    return Dataset(
        images=images,
        labels=labels,
        label_mask=np.full(n, labeled, dtype=bool),
        sample_ids=np.arange(n, dtype=np.int64),
    )
