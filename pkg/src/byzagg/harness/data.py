"""Datasets for the training harness and Dirichlet label partitioning."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigInvalid

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray  # (m, features) float64
    y: np.ndarray  # (m,) int64
    num_classes: int

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.num_classes)

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.x, np.asarray(y, dtype=np.int64), self.num_classes)


def standardize(train: np.ndarray, test: np.ndarray):
    """Scale features with statistics of the training split only."""
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    return (train - mean) / std, (test - mean) / std


def synthetic_blobs(
    n_train: int = 5000,
    n_test: int = 1000,
    features: int = 20,
    classes: int = 10,
    separation: float = 3.0,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Gaussian blobs, one per class, standardized on the training split."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
    centers = rng.normal(0.0, separation / np.sqrt(2), size=(classes, features))
    total = n_train + n_test
    y = rng.integers(0, classes, size=total)
    x = centers[y] + rng.normal(size=(total, features))
    xtr, xte = standardize(x[:n_train], x[n_train:])
    return Dataset(xtr, y[:n_train].astype(np.int64), classes), Dataset(xte, y[n_train:].astype(np.int64), classes)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_idx(path) -> np.ndarray:
    """Read an IDX file of unsigned bytes (images or labels)."""
    with _open(path) as fh:
        raw = fh.read()
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_LABELS:
        dims = 1
    elif magic == IDX_IMAGES:
        dims = 3
    else:
        raise ConfigInvalid(f"{path}: unsupported IDX magic {magic:#010x}")
    shape = struct.unpack(">" + "I" * dims, raw[4 : 4 + 4 * dims])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * dims)
    if data.size != int(np.prod(shape)):
        raise ConfigInvalid(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
    return data.reshape(shape)


def load_idx_dataset(images, labels, num_classes: int = 10) -> Dataset:
    x = load_idx(images)
    x = x.reshape(x.shape[0], -1).astype(np.float64) / 255.0
    y = load_idx(labels).astype(np.int64)
    if len(x) != len(y):
        raise ConfigInvalid("image and label counts differ")
    return Dataset(x, y, num_classes)


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Rows of ``label,feature...``; a non-numeric first row is treated as a header."""
    with open(path) as fh:
        first = fh.readline()
    skip = 0 if _numeric(first.split(",")[0]) else 1
    arr = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    y = arr[:, 0].astype(np.int64)
    return Dataset(arr[:, 1:], y, num_classes or int(y.max()) + 1)


def _numeric(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def dirichlet_partition(labels, n: int, beta: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Split sample indices over ``n`` clients with Dirichlet(beta) label shares.

    Every index lands with exactly one client.  A client left empty takes one
    sample from the currently largest client.
    """
    labels = np.asarray(labels)
    if n < 1 or not beta > 0:
        raise ConfigInvalid("need n >= 1 and beta > 0")
    if len(labels) < n:
        raise ConfigInvalid(f"{len(labels)} samples cannot cover {n} clients")
    parts: list[list[int]] = [[] for _ in range(n)]
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        idx = idx[rng.permutation(len(idx))]
        props = rng.dirichlet(np.full(n, beta))
        cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
        for k, chunk in enumerate(np.split(idx, cuts)):
            parts[k].extend(chunk.tolist())
    for k in range(n):
        if not parts[k]:
            donor = max(range(n), key=lambda i: (len(parts[i]), -i))
            parts[k].append(parts[donor].pop())
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
