"""Datasets: MNIST IDX files, synthetic manifolds and seeded splits.

IDX layout: a 4-byte big-endian magic (0x00 0x00 type ndim), one big-endian
uint32 per dimension, then the unsigned-byte payload in row-major order.
Paths ending in ``.gz`` are read and written through gzip.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IdxFormatError
from .models import MlpParams, init_mlp, mlp_forward

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
MAX_PAYLOAD_BYTES = 1 << 34

# Desk-scale subset sizes used when no explicit limit is configured.
DESK_TRAIN = 10_000
DESK_TEST = 2_000


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray  # (N, n)
    name: str = "data"
    split: str = "train"
    scale: float = 1.0
    offset: float = 0.0
    image_shape: tuple[int, int] | None = None
    labels: np.ndarray | None = None
    generator: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"dataset needs a non-empty (N, n) sample matrix, got {self.samples.shape}")

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def head(self, count: int) -> "Dataset":
        labels = None if self.labels is None else self.labels[:count]
        return replace(self, samples=self.samples[:count], labels=labels)


def _open(path, mode):
    path = os.fspath(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def _read_bytes(path) -> bytes:
    with _open(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, magic: int, what: str) -> tuple[tuple[int, ...], np.ndarray]:
    if len(raw) < 4:
        raise IdxFormatError(f"truncated {what} file: missing magic number", offset=len(raw))
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"bad magic number {found} for {what} file, expected {magic}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"truncated {what} header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = 1
    for i, d in enumerate(dims):
        if d >= 1 << 31:
            raise IdxFormatError(f"dimension {i} of {what} file is too large ({d})", offset=4 + 4 * i)
        total *= d
    if total > MAX_PAYLOAD_BYTES:
        raise IdxFormatError(f"{what} payload of {total} bytes overflows the supported size", offset=4)
    if len(raw) < header + total:
        raise IdxFormatError(f"truncated {what} payload: expected {total} bytes, found {len(raw) - header}",
                             offset=len(raw))
    if len(raw) > header + total:
        raise IdxFormatError(f"{len(raw) - header - total} trailing bytes after {what} payload",
                             offset=header + total)
    payload = np.frombuffer(raw, dtype=np.uint8, count=total, offset=header)
    return dims, payload


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 images of shape (N, rows, cols)."""
    dims, payload = _parse_idx(_read_bytes(path), IMAGE_MAGIC, "image")
    return payload.reshape(dims).copy()


def load_idx_images(path, limit: int | None = None, split: str = "train") -> Dataset:
    """Images flattened to (N, rows*cols) and divided by 255."""
    images = read_idx_images(path)
    if limit is not None:
        images = images[:limit]
    if images.shape[0] == 0:
        raise IdxFormatError(f"image file {os.fspath(path)} contains no images", offset=4)
    N, rows, cols = images.shape
    samples = images.reshape(N, rows * cols).astype(np.float64) / 255.0
    return Dataset(samples, name=os.path.basename(os.fspath(path)), split=split, scale=1.0 / 255.0,
                   offset=0.0, image_shape=(rows, cols))


def load_idx_labels(path) -> np.ndarray:
    dims, payload = _parse_idx(_read_bytes(path), LABEL_MAGIC, "label")
    bad = np.flatnonzero(payload > 9)
    if bad.size:
        raise IdxFormatError(f"label value {payload[bad[0]]} outside 0..9", offset=8 + int(bad[0]))
    return payload.copy()


def write_idx_images(path, images) -> None:
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError(f"images must be a uint8 (N, rows, cols) array, got {images.dtype} {images.shape}")
    with _open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        f.write(np.ascontiguousarray(images).tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.dtype != np.uint8:
        raise ValueError("labels must be a uint8 vector")
    with _open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def to_pixels(samples, scale: float = 1.0 / 255.0, offset: float = 0.0) -> np.ndarray:
    """Invert the normalization and round to uint8, clipping to 0..255."""
    return np.clip(np.rint((np.asarray(samples) - offset) / scale), 0, 255).astype(np.uint8)


def synthetic_manifold(kind: str, n: int, r_true: int, N: int, noise: float = 0.0, seed: int = 0,
                       hidden: int = 16) -> Dataset:
    """Samples with known ``r_true``-dimensional structure.

    ``linear_subspace``: ``X = V Z + noise * eps`` with orthonormal ``V``
    (kept in ``generator``) and standard normal ``Z``.
    ``tanh_image``: ``X = phi(Z) + noise * eps`` for a random frozen tanh
    decoder ``phi`` (kept in ``generator``), so noise-free samples lie in
    the decoder's image.
    """
    if not 1 <= r_true <= n or N < 1:
        raise ValueError(f"need 1 <= r_true <= n and N >= 1, got r_true={r_true}, n={n}, N={N}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    if kind == "linear_subspace":
        V, _ = np.linalg.qr(rng.standard_normal((n, r_true)))
        Z = rng.standard_normal((N, r_true))
        X = Z @ V.T
        generator = V
    elif kind == "tanh_image":
        phi = init_mlp(r_true, hidden, n, int(rng.integers(2**63)))
        b1 = rng.uniform(-0.5, 0.5, hidden)
        phi = MlpParams(phi.W1, b1, phi.W2, phi.b2)
        Z = rng.uniform(-1.0, 1.0, (N, r_true))
        X = np.asarray(mlp_forward(phi, Z))
        generator = phi
    else:
        raise ValueError(f"unknown manifold kind {kind!r}")
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    return Dataset(np.ascontiguousarray(X), name=f"{kind}-n{n}-r{r_true}", generator=generator)


def split(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffled split into ``round(fraction * N)`` train and the rest test."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if dataset.N < 2:
        raise ValueError("need at least two samples to split")
    order = np.random.default_rng(seed).permutation(dataset.N)
    k = min(max(int(round(fraction * dataset.N)), 1), dataset.N - 1)

    def take(idx, tag):
        labels = None if dataset.labels is None else dataset.labels[idx]
        return replace(dataset, samples=dataset.samples[idx], labels=labels, split=tag)

    return take(order[:k], "train"), take(order[k:], "test")
