"""Dataset ingestion (IDX, CSV) and the synthetic two-moons testbed."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

SPLITS = ("train", "val", "test")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, d), values in [0, 1]
    labels: np.ndarray  # (n,)
    split: np.ndarray  # (n,) of "train" / "val" / "test"

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise DataFormatError("inputs and labels are not aligned")
        if self.split.shape[0] != self.labels.shape[0]:
            raise DataFormatError("split tags are not aligned")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        keep = self.split == tag
        return self.inputs[keep], self.labels[keep]


def assign_splits(n: int, seed: int = 0, fractions=(0.8, 0.1, 0.1)) -> np.ndarray:
    """Seeded shuffle into train/val/test with the given fractions."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not np.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    tags = np.empty(n, dtype=object)
    tags[order[:n_train]] = "train"
    tags[order[n_train : n_train + n_val]] = "val"
    tags[order[n_train + n_val :]] = "test"
    return tags.astype(str)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Read an IDX file of unsigned bytes (big-endian header)."""
    with _open(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise DataFormatError(f"{path}: truncated header")
        (magic,) = struct.unpack(">I", head)
        if magic != expected_magic:
            raise DataFormatError(f"{path}: magic number {magic:#010x}, expected {expected_magic:#010x}")
        ndim = magic & 0xFF
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        body = fh.read()
    count = int(np.prod(dims))
    if len(body) != count:
        raise DataFormatError(f"{path}: {len(body)} data bytes, header promises {count}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path):
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError("image and label counts differ")
    return images.reshape(images.shape[0], -1) / 255.0, labels.astype(np.int64)


def load_csv(path, scale: float = 255.0):
    """Rows of ``label, v1, v2, ...`` after a header whose first field is ``label``.

    Feature values must lie in ``[0, scale]`` and are divided by ``scale``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip().lower() != "label":
        raise DataFormatError(f"{path}: header must start with 'label'")
    width = len(rows[0])
    body = [r for r in rows[1:] if r]
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    for i, r in enumerate(body, start=2):
        if len(r) != width:
            raise DataFormatError(f"{path}:{i}: expected {width} fields, found {len(r)}")
    try:
        arr = np.array(body, dtype=float)
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric field ({exc})") from exc
    labels = arr[:, 0]
    if np.any(labels < 0) or np.any(labels != np.round(labels)):
        raise DataFormatError(f"{path}: labels must be nonnegative integers")
    values = arr[:, 1:]
    if np.any(values < 0) or np.any(values > scale):
        raise DataFormatError(f"{path}: feature values outside [0, {scale:g}]")
    return values / scale, labels.astype(np.int64)


def load_dataset(path, fmt: str = "csv", *, labels_path=None, seed: int = 0, fractions=(0.8, 0.1, 0.1)) -> Dataset:
    """Load a dataset from disk and tag a seeded train/val/test split.

    For ``fmt="idx"`` ``path`` is the image file; ``labels_path`` defaults to
    the same name with ``images-idx3`` replaced by ``labels-idx1``.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"{path}: no such file")
    if fmt == "idx":
        if labels_path is None:
            labels_path = path.with_name(path.name.replace("images-idx3", "labels-idx1"))
        X, y = load_idx(path, labels_path)
    elif fmt == "csv":
        X, y = load_csv(path)
    else:
        raise DataFormatError(f"unknown dataset format {fmt!r}")
    return Dataset(X, y, assign_splits(len(y), seed, fractions))


def make_moons(n: int = 1000, noise: float = 0.1, seed: int = 0, fractions=(0.6, 0.1, 0.3)) -> Dataset:
    """Two interleaved half circles, mapped into the unit square."""
    rng = np.random.default_rng(seed)
    n_a = n // 2
    n_b = n - n_a
    ta = rng.uniform(0, np.pi, n_a)
    tb = rng.uniform(0, np.pi, n_b)
    a = np.column_stack([np.cos(ta), np.sin(ta)])
    b = np.column_stack([1.0 - np.cos(tb), 0.5 - np.sin(tb)])
    X = np.vstack([a, b]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n_a, dtype=np.int64), np.ones(n_b, dtype=np.int64)])
    X = np.clip((X - np.array([-1.5, -1.0])) / np.array([4.0, 2.5]), 0.0, 1.0)
    return Dataset(X, y, assign_splits(n, seed, fractions))


def make_blobs_separable(n: int = 400, seed: int = 0) -> Dataset:
    """Two linearly separable Gaussian clusters in the unit square."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    centers = np.array([[0.3, 0.3], [0.7, 0.7]])
    X = np.clip(centers[y] + 0.07 * rng.standard_normal((n, 2)), 0, 1)
    return Dataset(X, y.astype(np.int64), assign_splits(n, seed))
