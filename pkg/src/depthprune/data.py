"""Datasets: seeded synthetic 2-D problems, IDX image files, and splits."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SYNTHETIC_KINDS = ("blobs", "moons", "rings")


class IdxError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    n_classes: int = 2

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("dataset is empty")
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs, self.labels

    def subset(self, idx: np.ndarray, split: str) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], split, self.n_classes)


def _standardize(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def gen_synthetic(kind: str, n: int, noise: float = 0.0, seed: int = 0, n_classes: int = 2) -> Dataset:
    """Balanced 2-D toy problems with standardized features.

    blobs: clusters of radius <= 1 around centres 4 apart on a circle, plus
    Gaussian jitter of std ``noise`` (noise 0 keeps the classes separable).
    moons: two interleaved half circles. rings: concentric circles.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"kind must be one of {SYNTHETIC_KINDS}")
    if n < 4:
        raise ValueError("n must be at least 4")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    if kind == "blobs":
        angle = 2 * np.pi * np.arange(n_classes) / n_classes
        radius = 2.0 / np.sin(np.pi / n_classes) if n_classes > 2 else 2.0
        centres = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        pts = rng.standard_normal((n, 2)) * 0.5
        norm = np.linalg.norm(pts, axis=1, keepdims=True)
        pts = np.where(norm > 1.0, pts / norm, pts)
        x = centres[labels] + pts
    elif kind == "moons":
        if n_classes != 2:
            raise ValueError("moons has exactly two classes")
        theta = rng.uniform(0, np.pi, n)
        outer = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        inner = np.stack([1 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
        x = np.where(labels[:, None] == 0, outer, inner)
    else:
        theta = rng.uniform(0, 2 * np.pi, n)
        r = 1.0 + labels.astype(np.float64)
        x = r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    if noise:
        x = x + rng.normal(0.0, noise, x.shape)
    order = rng.permutation(n)
    x = _standardize(x[order]).astype(np.float32)
    return Dataset(x, labels[order].astype(np.int64), "train", n_classes)


def split(ds: Dataset, test_fraction: float = 0.2, val_fraction: float = 0.1, seed: int = 0):
    """Seeded disjoint train / val / test split; val is taken from the train part."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    test_idx, rest = order[:n_test], order[n_test:]
    n_val = int(round(val_fraction * len(rest)))
    val_idx, train_idx = rest[:n_val], rest[n_val:]
    return ds.subset(train_idx, "train"), ds.subset(val_idx, "val"), ds.subset(test_idx, "test")


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path: str | Path, magic: int, ndim: int) -> np.ndarray:
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxError(f"{path}: truncated header at byte offset {len(raw)} (need {header})")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IdxError(f"{path}: magic number 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IdxError(
            f"{path}: truncated at byte offset {len(raw)}, expected {header + size} bytes"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path, split: str = "train", n_classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1] then standardized per channel."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise IdxError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float32)[:, None, :, :] / 255.0
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    std = x.std(axis=(0, 2, 3), keepdims=True)
    std[std == 0] = 1.0
    x = ((x - mean) / std).astype(np.float32)
    y = labels.astype(np.int64)
    k = n_classes if n_classes is not None else int(y.max()) + 1
    return Dataset(x, y, split, k)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 images (N, H, W) and labels (N,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())
