"""Deterministic data supply: splitmix64 RNG, IDX ingestion, synthetic blobs, batching."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, InputError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

DATA_DIR_ENV = "BPRG_DATA_DIR"


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


@dataclass
class RngState:
    """splitmix64 generator; the single source of randomness in the project."""

    state: int

    def __post_init__(self):
        self.state &= _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix(self.state)

    def next_float(self) -> float:
        # 53 uniform mantissa bits -> [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53

    def next_block_u64(self, n: int) -> np.ndarray:
        """Vectorized splitmix64: identical stream to n calls of next_u64."""
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & _MASK64
        return z

    def next_block_float(self, n: int) -> np.ndarray:
        return (self.next_block_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def randbelow(self, bound: int) -> int:
        if bound <= 0:
            raise InputError("randbelow bound must be positive")
        return self.next_u64() % bound

    def spawn(self) -> "RngState":
        """Derive an independent child stream."""
        return RngState(self.next_u64())


def rng_next(rng: RngState) -> int:
    """One splitmix64 step; returns the 64-bit output."""
    return rng.next_u64()


def permutation(n: int, rng: RngState) -> np.ndarray:
    """Fisher-Yates shuffle of 0..n-1 driven by rng_next (high index first)."""
    idx = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


@dataclass
class Dataset:
    """Immutable feature/label pairs with values normalized to [0, 1]."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"feature count {self.features.shape[0]} != label count {self.labels.shape[0]}"
            )
        if self.labels.size and int(self.labels.max()) >= self.class_count:
            raise FormatError("label out of range for class_count")

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.class_count)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated IDX file while reading {what}")
    return buf


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an MNIST-style IDX image/label pair, scaling pixels by 1/255."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08X}, expected 0x{IDX_IMAGE_MAGIC:08X}")
        raw = _read_exact(f, count * rows * cols, "image pixels")
        if f.read(1):
            raise FormatError("trailing bytes after image data")
    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08X}, expected 0x{IDX_LABEL_MAGIC:08X}")
        label_raw = _read_exact(f, label_count, "labels")
        if f.read(1):
            raise FormatError("trailing bytes after label data")
    if count != label_count:
        raise FormatError(f"image count {count} != label count {label_count}")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float32) / np.float32(255.0)
    features = pixels.reshape(count, rows * cols)
    labels = np.frombuffer(label_raw, dtype=np.uint8).astype(np.int64)
    classes = int(labels.max()) + 1 if label_count else 1
    return Dataset(features, labels, classes)


def save_idx(images_path: str, labels_path: str, pixels: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX format."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if pixels.ndim != 3:
        raise InputError("pixels must have shape (n, rows, cols)")
    n, rows, cols = pixels.shape
    if labels.shape != (n,):
        raise InputError("labels must have shape (n,)")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(labels.tobytes())


def synth_blobs(n: int, d: int, classes: int, spread: float, rng: RngState) -> Dataset:
    """Separable synthetic dataset: class means are the binary patterns of the
    class index over d bits; samples are mean + spread*(2u-1), clamped to [0,1].

    Labels are assigned round-robin, so the dataset is hermetic and exactly
    reproducible from the rng seed.
    """
    if classes > 2**d:
        raise ConfigError(f"classes={classes} exceeds 2^d={2 ** d}")
    labels = np.arange(n, dtype=np.int64) % classes
    bit = np.arange(d, dtype=np.int64)
    means = ((labels[:, None] >> bit[None, :]) & 1).astype(np.float64)
    u = rng.next_block_float(n * d).reshape(n, d)
    features = np.clip(means + spread * (2.0 * u - 1.0), 0.0, 1.0).astype(np.float32)
    return Dataset(features, labels, classes)


def minibatches(ds: Dataset, batch_size: int, rng: RngState):
    """Shuffle then chunk; the last chunk may be short."""
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    order = permutation(len(ds), rng)
    out = []
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        out.append((ds.features[idx], ds.labels[idx]))
    return out


def resolve_data_path(path: str) -> str:
    """Resolve a path relative to BPRG_DATA_DIR when that env var is set."""
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path
