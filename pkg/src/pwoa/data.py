"""Datasets, loaders (IDX, CSV, synthetic blobs) and mini-batching."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, InputError, ParameterError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_CLASSES = 10


@dataclass(frozen=True)
class Dataset:
    """Inputs in [0, 1] with one-hot labels. Arrays are made read-only."""

    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2:
            raise InputError("dataset inputs and labels must be 2-D")
        if x.shape[0] != y.shape[0]:
            raise InputError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
            raise InputError("dataset inputs must lie in [0, 1]")
        if y.shape[0]:
            check_one_hot(y)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def label_indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.split)

    def subset(self, n: int, seed: int) -> "Dataset":
        """Seeded uniform sample of ``n`` rows (the whole set if ``n >= len``)."""
        if n >= len(self):
            return self
        rng = np.random.default_rng(seed)
        return self.take(np.sort(rng.choice(len(self), size=n, replace=False)))


def check_one_hot(labels: np.ndarray) -> None:
    ok = np.all((labels == 0.0) | (labels == 1.0), axis=1) & (labels.sum(axis=1) == 1.0)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise InputError(f"label row {bad} is not one-hot")


def one_hot(indices, k: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros((idx.shape[0], k))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(raw: bytes, magic: int, ndim: int, path) -> tuple[int, ...]:
    header_len = 4 + 4 * ndim
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated magic number", offset=len(raw))
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    return struct.unpack(f">{ndim}I", raw[4:header_len])


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an MNIST-style IDX image/label pair (optionally gzipped)."""
    raw_x = _read_bytes(images_path)
    raw_y = _read_bytes(labels_path)
    n, rows, cols = _idx_header(raw_x, IDX_IMAGES_MAGIC, 3, images_path)
    (n_labels,) = _idx_header(raw_y, IDX_LABELS_MAGIC, 1, labels_path)
    if n != n_labels:
        raise FormatError(f"{images_path} has {n} images but {labels_path} has {n_labels} labels", offset=4)
    pixels = n * rows * cols
    if len(raw_x) - 16 < pixels:
        raise FormatError(f"{images_path}: truncated pixel data", offset=len(raw_x))
    if len(raw_y) - 8 < n:
        raise FormatError(f"{labels_path}: truncated label data", offset=len(raw_y))
    x = np.frombuffer(raw_x, dtype=np.uint8, count=pixels, offset=16).reshape(n, rows * cols)
    y = np.frombuffer(raw_y, dtype=np.uint8, count=n, offset=8)
    if n and y.max() >= MNIST_CLASSES:
        bad = int(np.flatnonzero(y >= MNIST_CLASSES)[0])
        raise FormatError(f"{labels_path}: label {y[bad]} out of range", offset=8 + bad)
    return Dataset(x / 255.0, one_hot(y, MNIST_CLASSES), split)


def write_idx(images: np.ndarray, labels, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and integer labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    for path, blob in (
        (images_path, struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()),
        (labels_path, struct.pack(">2I", IDX_LABELS_MAGIC, n) + labels.tobytes()),
    ):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as fh:
            fh.write(blob)


def load_csv(path, d: int, k: int, split: str = "train") -> Dataset:
    """Rows of ``d`` features in [0, 1] followed by an integer label in [0, k)."""
    xs, ys = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != d + 1:
                raise FormatError(f"{path}:{lineno}: expected {d + 1} columns, got {len(row)}", line=lineno)
            try:
                feats = [float(v) for v in row[:d]]
                label = int(row[d])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}", line=lineno) from None
            if not all(0.0 <= v <= 1.0 for v in feats):
                raise FormatError(f"{path}:{lineno}: feature outside [0, 1]", line=lineno)
            if not 0 <= label < k:
                raise FormatError(f"{path}:{lineno}: label {label} outside [0, {k})", line=lineno)
            xs.append(feats)
            ys.append(label)
    x = np.array(xs, dtype=np.float64).reshape(len(xs), d)
    return Dataset(x, one_hot(ys, k), split)


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for x, y in zip(dataset.inputs, dataset.label_indices):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def synth_blobs(seed: int, n: int, d: int, k: int, margin: float, spread: float = 0.15,
                split: str = "train") -> Dataset:
    """Gaussian blobs in the unit box, filtered to be linearly separable.

    A sample of class ``y`` is kept only if its distance to every bisector
    between center ``y`` and another center ``j`` is at least
    ``margin * |c_j - c_y| / 2``; so ``margin`` in [0, 1) is the fraction of
    the half-gap between centers that is left empty. Classes are balanced
    up to remainder.
    """
    if not 0.0 <= margin < 1.0:
        raise ParameterError("margin must lie in [0, 1)")
    if k < 2 or d < 1:
        raise ParameterError("need k >= 2 classes and d >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(k, d))
    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    xs, ys = [], []
    for c in range(k):
        others = np.delete(np.arange(k), c)
        diff = centers[others] - centers[c]
        gap = np.linalg.norm(diff, axis=1)
        if np.any(gap == 0.0):
            raise ParameterError("coincident cluster centers")
        got = np.empty((0, d))
        while got.shape[0] < counts[c]:
            cand = np.clip(centers[c] + spread * rng.standard_normal((max(4 * counts[c], 16), d)), 0.0, 1.0)
            # signed distance to the bisector between c and each other center
            dist = ((centers[c] + centers[others]) / 2 - cand[:, None, :]) * diff / gap[:, None]
            dist = dist.sum(axis=2)
            keep = np.all(dist >= margin * gap / 2, axis=1)
            got = np.vstack([got, cand[keep]])
        xs.append(got[: counts[c]])
        ys.extend([c] * counts[c])
    x = np.vstack(xs) if xs else np.empty((0, d))
    order = rng.permutation(n)
    return Dataset(x[order], one_hot(np.array(ys, dtype=np.int64)[order], k), split)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 128
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ParameterError("batch_size must be at least 2")


def batches(dataset: Dataset, plan: BatchPlan, epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(inputs, labels, indices)`` over a permutation seeded by (seed, epoch)."""
    n = len(dataset)
    order = np.random.default_rng([plan.seed, epoch]).permutation(n)
    stop = n - n % plan.batch_size if plan.drop_last else n
    for start in range(0, stop, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        yield dataset.inputs[idx], dataset.labels[idx], idx
