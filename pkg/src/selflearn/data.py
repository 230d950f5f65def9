"""Synthetic generators, IDX ingestion and labelled/unlabelled splitting."""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, IdxFormatError
from .propagation import SEED, DataPools

DATASET_KINDS = ("gaussian_blobs", "two_moons", "concentric_rings", "idx_images")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetSpec:
    """What to generate or load.

    For the synthetic kinds the class structure lives in the first two
    coordinates (rotated by ``rotation`` degrees); any further coordinates up
    to ``dim`` are pure noise. ``noise`` is the Gaussian standard deviation.
    """

    kind: str = "gaussian_blobs"
    num_classes: int = 2
    samples_per_class: int = 100
    noise: float = 0.1
    seed: int = 0
    dim: int = 2
    rotation: float = 0.0
    radius: float = 3.0
    image_path: str | None = None
    label_path: str | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; expected one of {DATASET_KINDS}")
        if self.kind == "idx_images":
            if not (self.image_path and self.label_path):
                raise ConfigError("idx_images needs image_path and label_path")
            return
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.kind == "two_moons" and self.num_classes != 2:
            raise ConfigError("two_moons has exactly two classes")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be at least 1")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown dataset fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


def _rotate(points: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0:
        return points
    t = np.deg2rad(degrees)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    return points @ rot.T


def _blobs(spec: DatasetSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    c, n = spec.num_classes, spec.samples_per_class
    angles = 2 * np.pi * np.arange(c) / c
    centers = spec.radius * np.column_stack([np.cos(angles), np.sin(angles)])
    labels = np.repeat(np.arange(c), n)
    return centers[labels], labels


def _moons(spec: DatasetSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    n = spec.samples_per_class
    t = np.linspace(0, np.pi, n)
    outer = np.column_stack([np.cos(t), np.sin(t)])
    inner = np.column_stack([1 - np.cos(t), 0.5 - np.sin(t)])
    return np.vstack([outer, inner]), np.repeat([0, 1], n)


def _rings(spec: DatasetSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    c, n = spec.num_classes, spec.samples_per_class
    labels = np.repeat(np.arange(c), n)
    theta = rng.uniform(0, 2 * np.pi, size=c * n)
    r = (labels + 1.0) * spec.radius / c
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)]), labels


_GENERATORS = {"gaussian_blobs": _blobs, "two_moons": _moons, "concentric_rings": _rings}


def generate(spec: DatasetSpec) -> Dataset:
    if spec.kind == "idx_images":
        return load_idx(spec.image_path, spec.label_path)
    rng = np.random.default_rng(spec.seed)
    base, labels = _GENERATORS[spec.kind](spec, rng)
    base = _rotate(base, spec.rotation)
    x = np.zeros((len(labels), spec.dim))
    x[:, :2] = base
    x += spec.noise * rng.standard_normal(x.shape)
    return Dataset(x, labels.astype(np.int64))


# -- IDX --------------------------------------------------------------------

def _read_header(raw: bytes, expected_magic: int, what: str) -> tuple[tuple[int, ...], int]:
    if len(raw) < 4:
        raise IdxFormatError("magic", f"{what} file shorter than the 4-byte magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError("magic", f"{what} file has magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise IdxFormatError("dimensions", f"{what} header truncated: need {ndim} dimension sizes")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    if any(d == 0 for d in dims[1:]):
        raise IdxFormatError("dimensions", f"{what} has a zero-sized dimension {dims}")
    return dims, end


def _read_payload(raw: bytes, dims, offset: int, what: str) -> np.ndarray:
    count = int(np.prod(dims, dtype=np.int64))
    have = len(raw) - offset
    if have < count:
        raise IdxFormatError("data", f"{what} data truncated: expected {count} bytes, found {have}")
    if have > count:
        raise IdxFormatError("data", f"{what} has {have - count} trailing bytes after the payload")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset).reshape(dims)


def load_idx(image_path, label_path) -> Dataset:
    """Read an IDX image/label file pair (unsigned-byte payloads).

    Pixels are flattened row-major and scaled to [0, 1].
    """
    img_raw = Path(image_path).read_bytes()
    lab_raw = Path(label_path).read_bytes()
    img_dims, img_off = _read_header(img_raw, IDX_IMAGES_MAGIC, "image")
    lab_dims, lab_off = _read_header(lab_raw, IDX_LABELS_MAGIC, "label")
    if img_dims[0] != lab_dims[0]:
        raise IdxFormatError("count", f"{img_dims[0]} images but {lab_dims[0]} labels")
    images = _read_payload(img_raw, img_dims, img_off, "image")
    labels = _read_payload(lab_raw, lab_dims, lab_off, "label")
    features = images.reshape(img_dims[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64))


def write_idx(image_path, label_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (N x H x W) and labels (N) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(image_path, "wb") as f:
        f.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        f.write(struct.pack(f">{images.ndim}I", *images.shape))
        f.write(images.tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


# -- splitting ---------------------------------------------------------------

def split_ssl(dataset: Dataset, labels_per_class, test_fraction: float = 0.2, seed: int = 0) -> DataPools:
    """Partition a labelled dataset into seed-labelled, unlabelled and test pools.

    Each class contributes ``round(test_fraction * class size)`` test examples
    and exactly ``labels_per_class`` seed labels; the rest become unlabelled,
    with their labels kept only as audit truth. ``labels_per_class="all"``
    labels every non-test example.
    """
    if not 0 <= test_fraction < 1:
        raise ConfigError("test_fraction must lie in [0, 1)")
    y = np.asarray(dataset.labels)
    rng = np.random.default_rng(seed)
    seed_idx, unl_idx, test_idx = [], [], []
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        n_test = int(round(test_fraction * len(members)))
        available = len(members) - n_test
        n_lab = available if labels_per_class == "all" else int(labels_per_class)
        if n_lab < 0 or n_lab > available:
            raise ValueError(
                f"class {c} has {len(members)} examples; cannot take {n_test} test + {n_lab} labelled")
        test_idx.append(members[:n_test])
        seed_idx.append(members[n_test:n_test + n_lab])
        unl_idx.append(members[n_test + n_lab:])
    seed_idx, unl_idx, test_idx = (np.sort(np.concatenate(a)).astype(np.int64)
                                   for a in (seed_idx, unl_idx, test_idx))
    x = dataset.features
    return DataPools(
        labeled_x=x[seed_idx],
        labeled_y=y[seed_idx].astype(np.int64),
        labeled_origin=np.full(len(seed_idx), SEED, dtype=np.int8),
        labeled_ids=seed_idx,
        unlabeled_x=x[unl_idx],
        unlabeled_ids=unl_idx,
        test_x=x[test_idx],
        test_y=y[test_idx].astype(np.int64),
        audit_labels=y[unl_idx].astype(np.int64),
    )
