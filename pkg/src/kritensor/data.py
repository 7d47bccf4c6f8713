"""Labeled image datasets: the KRID binary format, CIFAR-10 import, synthetic data.

Images are flattened in channel-plane order (all of channel 0, then channel 1,
...), each plane row-major. This is the CIFAR-10 binary layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError

KRID_MAGIC = b"KRID"
KRID_VERSION = 1
_KRID_HEADER = struct.Struct("<4sH4I")

CIFAR_RECORD = 3073
CIFAR_GEOMETRY = (32, 32, 3)


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, h*w*c) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    geometry: tuple[int, int, int]  # (h, w, c)
    sample_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.geometry = tuple(int(g) for g in self.geometry)
        if not self.sample_ids:
            self.sample_ids = [str(n) for n in range(len(self.labels))]
        h, w, c = self.geometry
        if self.images.ndim != 2 or self.images.shape[1] != h * w * c:
            raise FormatError(f"images of shape {self.images.shape} do not match geometry {self.geometry}")
        if len(self.labels) != len(self.images) or len(self.sample_ids) != len(self.images):
            raise FormatError("images, labels and sample ids differ in length")
        if np.any(self.images < 0) or np.any(self.images > 1) or not np.all(np.isfinite(self.images)):
            raise FormatError("pixel values must lie in [0, 1]")
        if np.any(self.labels < 0):
            raise FormatError("labels must be nonnegative")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise FormatError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        h, w, c = self.geometry
        return h * w * c

    def subset(self, ids: Sequence[str]) -> "LabeledDataset":
        pos = {s: n for n, s in enumerate(self.sample_ids)}
        missing = [s for s in ids if s not in pos]
        if missing:
            raise ConfigError(f"unknown sample ids: {missing[:5]}")
        rows = [pos[s] for s in ids]
        return LabeledDataset(self.images[rows], self.labels[rows], self.geometry, [self.sample_ids[r] for r in rows])

    def head(self, n: int) -> "LabeledDataset":
        return LabeledDataset(self.images[:n], self.labels[:n], self.geometry, self.sample_ids[:n])


def krid_bytes(ds: LabeledDataset) -> bytes:
    h, w, c = ds.geometry
    if np.any(ds.labels > 0xFFFF):
        raise FormatError("labels must fit in u16")
    header = _KRID_HEADER.pack(KRID_MAGIC, KRID_VERSION, len(ds), h, w, c)
    return header + ds.images.astype("<f4").tobytes() + ds.labels.astype("<u2").tobytes()


def save_krid(ds: LabeledDataset, path: str | Path) -> None:
    Path(path).write_bytes(krid_bytes(ds))


def parse_krid(data: bytes) -> LabeledDataset:
    if len(data) < _KRID_HEADER.size:
        raise FormatError("file too short for KRID header")
    magic, version, n, h, w, c = _KRID_HEADER.unpack_from(data, 0)
    if magic != KRID_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {KRID_MAGIC!r}")
    if version != KRID_VERSION:
        raise FormatError(f"unsupported KRID version {version}")
    if min(h, w, c) < 1:
        raise FormatError("geometry dimensions must be positive")
    n_px = n * h * w * c
    expected = _KRID_HEADER.size + 4 * n_px + 2 * n
    if len(data) != expected:
        raise FormatError(f"KRID payload is {len(data)} bytes, header implies {expected}")
    off = _KRID_HEADER.size
    images = np.frombuffer(data, dtype="<f4", count=n_px, offset=off).reshape(n, h * w * c)
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=off + 4 * n_px)
    return LabeledDataset(images.astype(np.float64), labels.astype(np.int64), (h, w, c))


def load_krid(path: str | Path) -> LabeledDataset:
    return parse_krid(Path(path).read_bytes())


def parse_cifar_batch(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode CIFAR-10 binary records into (pixel bytes (n, 3072), labels (n,))."""
    if len(data) == 0 or len(data) % CIFAR_RECORD:
        raise FormatError(f"CIFAR batch size {len(data)} is not a positive multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if np.any(labels > 9):
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"record {bad}: label byte {labels[bad]} > 9")
    return rec[:, 1:], labels


def import_cifar(paths: Sequence[str | Path]) -> LabeledDataset:
    pixels, labels = [], []
    for p in paths:
        px, lab = parse_cifar_batch(Path(p).read_bytes())
        pixels.append(px)
        labels.append(lab)
    px = np.concatenate(pixels)
    # store exactly the float32 value the KRID file will hold
    images = (px.astype(np.float32) / np.float32(255.0)).astype(np.float64)
    return LabeledDataset(images, np.concatenate(labels), CIFAR_GEOMETRY)


def make_blobs(
    n: int,
    n_classes: int,
    geometry: tuple[int, int, int],
    seed: int,
    sigma: float = 0.05,
    separation: float = 10.0,
) -> LabeledDataset:
    """Gaussian clusters in pixel space with centers ``separation * sigma`` apart.

    Centers sit on orthogonal directions around the mid-grey image; labels are
    assigned round-robin so classes are balanced to within one sample.
    """
    _check_synthetic(n, n_classes, geometry)
    dim = int(np.prod(geometry))
    if n_classes > dim:
        raise ConfigError("blobs need at least as many pixels as classes")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, n_classes)))
    radius = separation * sigma / np.sqrt(2.0)
    centers = 0.5 + radius * basis.T
    labels = np.arange(n) % n_classes
    images = centers[labels] + sigma * rng.standard_normal((n, dim))
    return LabeledDataset(np.clip(images, 0.0, 1.0), labels, geometry)


def make_rings(
    n: int,
    n_classes: int,
    geometry: tuple[int, int, int],
    seed: int,
    noise: float = 0.02,
) -> LabeledDataset:
    """Concentric shells around the mid-grey image, one radius per class (not linearly separable)."""
    _check_synthetic(n, n_classes, geometry)
    dim = int(np.prod(geometry))
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # shell radius in per-pixel RMS units so the images stay mostly in range
    scale = 0.4 * np.sqrt(dim) / 2.0
    radius = (labels + 1) / (n_classes + 1) * scale
    images = 0.5 + radius[:, None] * direction + noise * rng.standard_normal((n, dim))
    return LabeledDataset(np.clip(images, 0.0, 1.0), labels, geometry)


def _check_synthetic(n: int, n_classes: int, geometry: tuple[int, int, int]) -> None:
    if n_classes < 2 or n < n_classes:
        raise ConfigError("need n >= n_classes >= 2")
    if len(geometry) != 3 or min(geometry) < 1:
        raise ConfigError(f"invalid geometry {geometry}")
