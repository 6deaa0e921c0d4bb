"""Dataset I/O: PGM images, the JSON manifest, FMT1 tensor files, synthetic faces."""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, LoadError

TENSOR_MAGIC = b"FMT1"
TEST_FRACTION = 0.25


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int
    splits: np.ndarray  # (N,) "train" / "test"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=object)
        if not (len(self.images) == len(self.labels) == len(self.splits)):
            raise ConfigError("images, labels and splits are not aligned")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigError(f"labels fall outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:3])

    def subset(self, split: str) -> "Dataset":
        keep = self.splits == split
        return Dataset(self.images[keep], self.labels[keep], self.class_count, self.splits[keep])

    def train(self) -> "Dataset":
        return self.subset("train")

    def test(self) -> "Dataset":
        return self.subset("test")


# --- PGM ---------------------------------------------------------------------

_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)\s+(\d+)\s+(\d+)\s")


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError("PGM output needs a 2-D uint8 array")
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5, maxval 255) into a uint8 array."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read image: {exc.strerror}", path) from exc
    m = _PGM_HEADER.match(raw)
    if not m:
        raise LoadError("not a binary PGM (P5) file", path)
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise LoadError(f"unsupported PGM maxval {maxval} (only 255)", path)
    body = raw[m.end():]
    if len(body) != w * h:
        raise LoadError(f"expected {w * h} pixel bytes, found {len(body)}", path)
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


# --- FMT1 tensors -------------------------------------------------------------


def write_tensor(path, array) -> None:
    """Magic, u64 rank, u64 dims, float32 payload (little-endian, row-major)."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<Q", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read tensor: {exc.strerror}", path) from exc
    if raw[:4] != TENSOR_MAGIC:
        raise LoadError("not an FMT1 tensor file", path)
    try:
        (rank,) = struct.unpack_from("<Q", raw, 4)
        dims = struct.unpack_from(f"<{rank}Q", raw, 12)
    except struct.error as exc:
        raise LoadError("truncated tensor header", path) from exc
    offset = 12 + 8 * rank
    count = math.prod(dims)
    if len(raw) - offset != 4 * count:
        raise LoadError(f"payload holds {(len(raw) - offset) // 4} values, dims need {count}", path)
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims).copy()


# --- manifest -----------------------------------------------------------------


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read manifest: {exc.strerror}", manifest_path) from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"manifest is not valid JSON: {exc}", manifest_path) from exc
    try:
        root = Path(doc["root"])
        size = doc["image_size"]
        class_count = int(doc["class_count"])
        entries = doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"manifest is missing field {exc}", manifest_path) from exc
    if not root.is_absolute():
        root = manifest_path.parent / root
    h, w = (size, size) if isinstance(size, int) else (int(size[0]), int(size[1]))

    images, labels, splits = [], [], []
    for entry in entries:
        path = root / entry["file"]
        pixels = read_pgm(path)
        if pixels.shape != (h, w):
            raise LoadError(f"image is {pixels.shape[0]}x{pixels.shape[1]}, manifest says {h}x{w}", path)
        cls = int(entry["class"])
        if not 0 <= cls < class_count:
            raise LoadError(f"class {cls} outside [0, {class_count})", path)
        if entry["split"] not in ("train", "test"):
            raise LoadError(f"unknown split {entry['split']!r}", path)
        images.append(pixels.astype(np.float64) / 255.0)
        labels.append(cls)
        splits.append(entry["split"])
    return Dataset(
        np.stack(images) if images else np.zeros((0, h, w)),
        np.asarray(labels, dtype=np.int64),
        class_count,
        np.asarray(splits, dtype=object),
    )


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write PGMs and ``manifest.json`` into ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = dataset.images.shape[1:3] if len(dataset) else dataset.images.shape[-2:]
    entries = []
    counters: dict[int, int] = {}
    for img, cls, split in zip(dataset.images, dataset.labels, dataset.splits):
        i = counters.get(int(cls), 0)
        counters[int(cls)] = i + 1
        name = f"c{int(cls):03d}_{i:04d}.pgm"
        write_pgm(out_dir / name, np.round(img * 255.0).clip(0, 255).astype(np.uint8))
        entries.append({"file": name, "class": int(cls), "split": str(split)})
    manifest = {
        "root": ".",
        "image_size": [int(h), int(w)],
        "class_count": int(dataset.class_count),
        "entries": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


# --- synthetic faces ------------------------------------------------------------


def synthetic_dataset(classes: int, per_class: int, size: int, seed: int) -> Dataset:
    """Procedural face-like data: each class is a fixed mixture of three Gaussian blobs.

    Samples jitter the blob centres and amplitudes and add pixel noise; values
    are quantized to 8 bits so the in-memory data equals what is saved.
    The last quarter of every class is the test split.
    """
    if size <= 0 or size % 8:
        raise ConfigError(f"image size must be a positive multiple of 8, got {size}")
    if classes < 1 or per_class < 0:
        raise ConfigError("need classes >= 1 and per_class >= 0")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.2, 0.8, (classes, 3, 2)) * size
    sigmas = rng.uniform(0.08, 0.2, (classes, 3)) * size
    amps = rng.uniform(0.4, 1.0, (classes, 3))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    n_test = int(per_class * TEST_FRACTION)
    images, labels, splits = [], [], []
    for c in range(classes):
        for i in range(per_class):
            img = np.full((size, size), 0.1)
            for j in range(3):
                cy, cx = centres[c, j] + rng.normal(0.0, 0.03 * size, 2)
                amp = amps[c, j] * (1.0 + rng.normal(0.0, 0.1))
                img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigmas[c, j] ** 2))
            img += rng.normal(0.0, 0.02, img.shape)
            img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
            images.append(img)
            labels.append(c)
            splits.append("test" if i >= per_class - n_test else "train")
    return Dataset(
        np.stack(images) if images else np.zeros((0, size, size)),
        np.asarray(labels, dtype=np.int64),
        classes,
        np.asarray(splits, dtype=object),
    )


def generate_synthetic(classes: int, per_class: int, size: int, seed: int, out_dir) -> tuple[Dataset, Path]:
    dataset = synthetic_dataset(classes, per_class, size, seed)
    return dataset, save_dataset(dataset, out_dir)
