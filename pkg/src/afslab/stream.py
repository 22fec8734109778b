"""Task streams: datasets, class-incremental splits, IDX files, augmentation.

A stream presents each training sample exactly once, grouped into small
batches per task. Features are float vectors in [0, 1] for image data and
unconstrained floats for synthetic Gaussian data.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidConfigError, InvalidInputError

IMAGE_MAGIC = 0x00000803  # unsigned bytes, 3 dimensions
LABEL_MAGIC = 0x00000801  # unsigned bytes, 1 dimension


@dataclass(frozen=True, eq=False)
class Sample:
    """One labeled feature vector with a stable id (its dataset index)."""

    features: np.ndarray
    label: int
    uid: int


@dataclass(frozen=True)
class StreamBatch:
    samples: tuple[Sample, ...]
    task_id: int
    batch_index: int

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class Dataset:
    """Feature matrix plus integer labels; split is 'train' or 'test'."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise InvalidInputError("features and labels must align")
        if self.num_classes < 1:
            raise InvalidConfigError("num_classes must be positive")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise InvalidInputError("labels out of range for num_classes")

    def __len__(self) -> int:
        return len(self.labels)

    def sample(self, index: int) -> Sample:
        return Sample(
            features=self.features[index], label=int(self.labels[index]), uid=index
        )


@dataclass(frozen=True)
class TaskSplit:
    """Disjoint, ordered class sets, one per task."""

    tasks: tuple[tuple[int, ...], ...]

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)


def split_tasks(dataset: Dataset, num_tasks: int) -> TaskSplit:
    """Partition class ids into contiguous equal-sized groups."""
    if num_tasks < 1:
        raise InvalidConfigError(f"num_tasks must be positive, got {num_tasks}")
    if dataset.num_classes % num_tasks != 0:
        raise InvalidConfigError(
            f"{dataset.num_classes} classes do not divide into {num_tasks} tasks"
        )
    per = dataset.num_classes // num_tasks
    tasks = tuple(
        tuple(range(i * per, (i + 1) * per)) for i in range(num_tasks)
    )
    return TaskSplit(tasks=tasks)


def batches(
    dataset: Dataset,
    task_classes: tuple[int, ...],
    batch_size: int,
    seed,
    task_id: int = 0,
) -> list[StreamBatch]:
    """Shuffle one task's samples and chunk them into stream batches.

    Every matching sample appears in exactly one batch; the final batch may
    be short. The shuffle is fully determined by the seed.
    """
    if batch_size < 1:
        raise InvalidConfigError(f"batch_size must be positive, got {batch_size}")
    rng = np.random.default_rng(seed)
    wanted = np.isin(dataset.labels, np.asarray(task_classes))
    indices = np.flatnonzero(wanted)
    indices = indices[rng.permutation(len(indices))]
    out = []
    for b, start in enumerate(range(0, len(indices), batch_size)):
        chunk = indices[start : start + batch_size]
        out.append(
            StreamBatch(
                samples=tuple(dataset.sample(int(i)) for i in chunk),
                task_id=task_id,
                batch_index=b,
            )
        )
    return out


def task_streams(
    dataset: Dataset, split: TaskSplit, batch_size: int, seed
) -> list[list[StreamBatch]]:
    """Build the per-task batch streams with independent child seeds."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    children = seed.spawn(split.num_tasks)
    return [
        batches(dataset, split.tasks[i], batch_size, children[i], task_id=i + 1)
        for i in range(split.num_tasks)
    ]


def task_test_sets(
    dataset: Dataset, split: TaskSplit
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-task (features, labels) pairs drawn from a test dataset."""
    out = []
    for classes in split.tasks:
        mask = np.isin(dataset.labels, np.asarray(classes))
        out.append((dataset.features[mask], dataset.labels[mask]))
    return out


def _read_exact(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise FormatError(
            f"truncated file: needed {count} bytes for {what} at offset {offset}, "
            f"file has {len(data)}"
        )
    return data[offset : offset + count]


def _read_u32(data: bytes, offset: int, what: str) -> int:
    return struct.unpack(">I", _read_exact(data, offset, 4, what))[0]


def load_idx(
    images_path: str, labels_path: str, split: str = "train"
) -> Dataset:
    """Parse an IDX image/label file pair into a Dataset.

    Images use big-endian magic 0x00000803 followed by count, rows, cols and
    a u8 payload; labels use magic 0x00000801 followed by count and one byte
    per label. Pixels are scaled to [0, 1]. Malformed input raises a
    FormatError naming the byte offset.
    """
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()

    magic = _read_u32(img, 0, "image magic")
    if magic != IMAGE_MAGIC:
        raise FormatError(
            f"bad image magic 0x{magic:08x} at offset 0 in {images_path}"
        )
    count = _read_u32(img, 4, "image count")
    rows = _read_u32(img, 8, "row count")
    cols = _read_u32(img, 12, "column count")
    payload = _read_exact(img, 16, count * rows * cols, "image payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    features = pixels.reshape(count, rows * cols)

    magic = _read_u32(lab, 0, "label magic")
    if magic != LABEL_MAGIC:
        raise FormatError(
            f"bad label magic 0x{magic:08x} at offset 0 in {labels_path}"
        )
    lab_count = _read_u32(lab, 4, "label count")
    if lab_count != count:
        raise FormatError(
            f"label count {lab_count} at offset 4 does not match image count {count}"
        )
    labels = np.frombuffer(
        _read_exact(lab, 8, lab_count, "label payload"), dtype=np.uint8
    ).astype(np.int64)

    num_classes = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(
        features=features, labels=labels, num_classes=num_classes, split=split
    )


def write_idx(dataset: Dataset, images_path: str, labels_path: str) -> None:
    """Write a dataset as an IDX pair; features are byte-quantized square images."""
    n, dim = dataset.features.shape
    side = math.isqrt(dim)
    if side * side != dim:
        raise InvalidConfigError(f"feature length {dim} is not a square image")
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, side, side))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def gen_synthetic(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed,
    test_per_class: int | None = None,
) -> tuple[Dataset, Dataset]:
    """Seeded Gaussian blobs: one unit-norm mean per class, isotropic noise.

    Returns disjoint train and test datasets drawn around the same means.
    test_per_class defaults to per_class // 5.
    """
    if num_classes < 1 or dim < 1 or per_class < 1:
        raise InvalidConfigError("num_classes, dim and per_class must be positive")
    if spread < 0:
        raise InvalidConfigError(f"spread must be non-negative, got {spread}")
    if test_per_class is None:
        test_per_class = max(per_class // 5, 1)
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    def draw(count: int, split: str) -> Dataset:
        feats = np.concatenate(
            [means[c] + spread * rng.normal(size=(count, dim)) for c in range(num_classes)]
        )
        labels = np.repeat(np.arange(num_classes), count)
        return Dataset(
            features=feats, labels=labels, num_classes=num_classes, split=split
        )

    return draw(per_class, "train"), draw(test_per_class, "test")


def flip_horizontal(features: np.ndarray, side: int) -> np.ndarray:
    """Mirror a row-major square image left to right."""
    return features.reshape(side, side)[:, ::-1].reshape(-1).copy()


def pad_crop(features: np.ndarray, side: int, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Zero-pad by `pad` on each side, then crop a random side x side window."""
    img = np.pad(features.reshape(side, side), pad)
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    return img[dy : dy + side, dx : dx + side].reshape(-1).copy()


def augment(
    batch: list[Sample],
    kind: str,
    rng: np.random.Generator,
    jitter_sigma: float = 0.1,
) -> list[Sample]:
    """Return transformed copies of a batch; originals are never touched.

    Kinds: "none" hands the input back unchanged, "image" applies a random
    horizontal flip plus a pad-4 random crop to square images, and "vector"
    adds Gaussian jitter with the given sigma.
    """
    if kind == "none":
        return list(batch)
    out = []
    for s in batch:
        if kind == "image":
            side = math.isqrt(s.features.size)
            if side * side != s.features.size:
                raise InvalidConfigError(
                    f"image augmentation needs square features, got {s.features.size}"
                )
            feats = s.features
            if rng.random() < 0.5:
                feats = flip_horizontal(feats, side)
            feats = pad_crop(feats, side, rng)
        elif kind == "vector":
            feats = s.features + rng.normal(0.0, jitter_sigma, size=s.features.shape)
        else:
            raise InvalidConfigError(f"unknown augmentation kind {kind!r}")
        out.append(Sample(features=feats, label=s.label, uid=s.uid))
    return out
