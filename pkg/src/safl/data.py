"""Datasets and the client shards built from them."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError

__all__ = [
    "Dataset",
    "Shard",
    "generate_synthetic",
    "load_idx",
    "save_idx",
    "partition_non_iid",
    "build_sybil_shards",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = "synthetic"
    image_shape: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ConfigError(f"features must be a non-empty matrix, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigError("one label per example is required")
        for arr in (self.features, self.labels):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


@dataclass(frozen=True)
class Shard:
    """A client's view of a dataset: some indices, optionally relabelled."""

    owner: int
    indices: np.ndarray
    label_override: int | None = None

    def view(self, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
        X = ds.features[self.indices]
        if self.label_override is None:
            return X, ds.labels[self.indices]
        return X, np.full(len(self.indices), self.label_override, dtype=ds.labels.dtype)

    def __len__(self) -> int:
        return len(self.indices)


def generate_synthetic(
    num_classes: int = 10,
    input_dim: int = 32,
    per_class: int = 100,
    spread: float = 0.2,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Isotropic Gaussian clusters around random unit-norm centres.

    Features are min-max scaled to [0, 1] over the whole sample (train and
    test together). Each class is split 80/20 into train/test.
    """
    if num_classes < 2 or per_class < 2 or input_dim < 1:
        raise ConfigError("need num_classes >= 2, per_class >= 2, input_dim >= 1")
    if spread < 0:
        raise ConfigError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, input_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    X = np.repeat(centers, per_class, axis=0)
    X = X + spread * rng.standard_normal(X.shape)
    y = np.repeat(np.arange(num_classes), per_class)

    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    X = (X - lo) / np.where(span > 0, span, 1.0)

    n_train = min(max(1, int(round(0.8 * per_class))), per_class - 1)
    within = np.tile(np.arange(per_class), num_classes)
    is_train = within < n_train
    make = lambda mask: Dataset(X[mask].copy(), y[mask].copy(), num_classes, "synthetic")
    return make(is_train), make(~is_train)


def _read_header(buf: bytes, what: str, fields: tuple[str, ...]) -> tuple[int, ...]:
    need = 4 * len(fields)
    if len(buf) < need:
        raise FormatError(f"{what}: truncated header (missing field '{fields[len(buf) // 4]}')")
    return struct.unpack(">" + "I" * len(fields), buf[:need])


def load_idx(images_path, labels_path, limit_per_class: int | None = None) -> Dataset:
    """Read an MNIST-style pair of IDX files.

    Pixels are divided by 255. With ``limit_per_class`` only the first that
    many examples of each class (in file order) are kept.
    """
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()

    magic, count, rows, cols = _read_header(img, "images", ("magic", "count", "rows", "cols"))
    if magic != IMAGES_MAGIC:
        raise FormatError(f"images: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    lmagic, lcount = _read_header(lab, "labels", ("magic", "count"))
    if lmagic != LABELS_MAGIC:
        raise FormatError(f"labels: bad magic 0x{lmagic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if count != lcount:
        raise FormatError(f"count mismatch: images has {count}, labels has {lcount}")
    if len(img) - 16 < count * rows * cols:
        raise FormatError(f"images: truncated pixel data for count={count}")
    if len(lab) - 8 < count:
        raise FormatError(f"labels: truncated label data for count={lcount}")

    pixels = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    pixels = pixels.reshape(count, rows * cols)

    if limit_per_class is not None:
        keep = np.zeros(count, dtype=bool)
        for c in np.unique(labels):
            keep[np.flatnonzero(labels == c)[:limit_per_class]] = True
        pixels, labels = pixels[keep], labels[keep]

    num_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(
        pixels.astype(np.float64) / 255.0,
        labels,
        num_classes,
        provenance="idx-file",
        image_shape=(rows, cols),
    )


def save_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write ``ds`` back out as IDX files (inverse of :func:`load_idx`)."""
    rows, cols = ds.image_shape or (1, ds.input_dim)
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    n = len(ds)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, n) + ds.labels.astype(np.uint8).tobytes()
    )


def partition_non_iid(ds: Dataset, num_clients: int) -> list[Shard]:
    """One shard per class: client ``i`` holds every example labelled ``i``."""
    if num_clients != ds.num_classes:
        raise ConfigError(
            f"one-class-per-client partition needs num_clients == num_classes "
            f"({num_clients} != {ds.num_classes})"
        )
    shards = []
    for c in range(num_clients):
        idx = ds.class_indices(c)
        if idx.size == 0:
            raise ConfigError(f"class {c} has no training examples")
        shards.append(Shard(c, idx))
    return shards


def build_sybil_shards(
    ds: Dataset,
    source_class: int,
    target_class: int,
    num_sybils: int,
    seed: int,
    *,
    owners: list[int] | None = None,
    duplicate_poison_data: bool = False,
) -> list[Shard]:
    """Label-flipped shards over the source class, one per sybil.

    By default the shuffled source examples are split into near-equal
    disjoint parts. ``duplicate_poison_data`` gives every sybil the full
    source set instead.
    """
    if source_class == target_class:
        raise ConfigError("source_class and target_class must differ")
    if num_sybils < 1:
        raise ConfigError("num_sybils must be at least 1")
    for c in (source_class, target_class):
        if not 0 <= c < ds.num_classes:
            raise ConfigError(f"class {c} outside [0, {ds.num_classes})")
    idx = ds.class_indices(source_class)
    if idx.size < num_sybils:
        raise ConfigError(
            f"source class {source_class} has {idx.size} examples, fewer than {num_sybils} sybils"
        )
    owners = list(range(num_sybils)) if owners is None else list(owners)
    if len(owners) != num_sybils:
        raise ConfigError("need one owner id per sybil")
    if duplicate_poison_data:
        parts = [idx.copy() for _ in range(num_sybils)]
    else:
        parts = np.array_split(np.random.default_rng(seed).permutation(idx), num_sybils)
    return [Shard(o, np.sort(p), target_class) for o, p in zip(owners, parts)]
