"""Dataset ingestion: CIFAR binary records, SVHN in the same layout, a
synthetic shapes set, normalization statistics and mini-batching."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError
from .rng import Rng
from .tensor import Tensor

PIXELS = 3 * 32 * 32


@dataclass
class LabeledImage:
    label: int
    pixels: np.ndarray  # [3, H, W] float32 in [0, 1]
    coarse_label: int | None = None


class Dataset:
    """Images stacked as ``[N, 3, H, W]`` float32 with int64 labels."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, classes: int,
                 coarse: np.ndarray | None = None):
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.classes = int(classes)
        self.coarse = coarse
        if len(self.images) != len(self.labels):
            raise DataError("image and label counts differ")

    @classmethod
    def from_records(cls, records, classes: int) -> "Dataset":
        if not records:
            return cls(np.zeros((0, 3, 32, 32), np.float32), np.zeros(0, np.int64), classes)
        coarse = None
        if records[0].coarse_label is not None:
            coarse = np.array([r.coarse_label for r in records], np.int64)
        return cls(np.stack([r.pixels for r in records]), [r.label for r in records], classes,
                   coarse)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> LabeledImage:
        coarse = None if self.coarse is None else int(self.coarse[i])
        return LabeledImage(int(self.labels[i]), self.images[i], coarse)

    def subset(self, limit: int) -> "Dataset":
        if not limit or limit >= len(self):
            return self
        coarse = None if self.coarse is None else self.coarse[:limit]
        return Dataset(self.images[:limit], self.labels[:limit], self.classes, coarse)

    @property
    def extent(self) -> int:
        return self.images.shape[-1]


@dataclass
class DatasetMeta:
    name: str
    classes: int
    train_size: int
    eval_size: int
    extent: int
    mean: tuple
    std: tuple


def compute_meta(name: str, train: Dataset, eval_: Dataset | None) -> DatasetMeta:
    """Per-channel mean/std of the training split (population std)."""
    x = train.images.astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    return DatasetMeta(name, train.classes, len(train), 0 if eval_ is None else len(eval_),
                       train.extent, tuple(float(m) for m in mean), tuple(float(s) for s in std))


def normalize(images: np.ndarray, meta: DatasetMeta) -> np.ndarray:
    mean = np.asarray(meta.mean, np.float32)[:, None, None]
    std = np.asarray(meta.std, np.float32)[:, None, None]
    return ((images - mean) / std).astype(np.float32)


# ---------------------------------------------------------------------------
# CIFAR / SVHN binary records


def _parse_records(buf: bytes, label_bytes: int, classes: int, fine_index: int,
                   coarse_classes: int | None = None) -> list:
    size = label_bytes + PIXELS
    if len(buf) % size:
        whole = len(buf) // size
        raise ParseError(f"truncated record: {len(buf) - whole * size} of {size} bytes",
                         offset=whole * size)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, size)
    out = []
    for i, rec in enumerate(raw):
        label = int(rec[fine_index])
        if label >= classes:
            raise ParseError(f"label {label} >= {classes}", offset=i * size + fine_index)
        coarse = None
        if coarse_classes is not None:
            coarse = int(rec[0])
            if coarse >= coarse_classes:
                raise ParseError(f"coarse label {coarse} >= {coarse_classes}", offset=i * size)
        pixels = rec[label_bytes:].reshape(3, 32, 32).astype(np.float32) / np.float32(255)
        out.append(LabeledImage(label, pixels, coarse))
    return out


def _pixel_bytes(img: LabeledImage) -> bytes:
    return np.clip(np.rint(img.pixels * 255), 0, 255).astype(np.uint8).tobytes()


def parse_cifar10_bin(buf: bytes) -> list:
    """Records of 1 label byte + 3072 planar RGB bytes (R, G, B 32x32 planes)."""
    return _parse_records(buf, 1, 10, 0)


def parse_cifar100_bin(buf: bytes) -> list:
    """Records of coarse label byte, fine label byte, 3072 pixels; the fine
    label is the class."""
    return _parse_records(buf, 2, 100, 1, coarse_classes=20)


def parse_svhn_bin(buf: bytes) -> list:
    """SVHN pre-converted to the CIFAR-10 record layout."""
    return _parse_records(buf, 1, 10, 0)


def serialize_cifar10(images) -> bytes:
    return b"".join(bytes([img.label]) + _pixel_bytes(img) for img in images)


def serialize_cifar100(images) -> bytes:
    return b"".join(bytes([img.coarse_label or 0, img.label]) + _pixel_bytes(img)
                    for img in images)


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def _find(data_dir, names):
    for sub in ("", "cifar-10-batches-bin", "cifar-100-binary", "svhn"):
        paths = [os.path.join(data_dir, sub, n) for n in names]
        if all(os.path.exists(p) for p in paths):
            return paths
    raise DataError(f"missing {', '.join(names)} under {data_dir}")


def load_dataset(name: str, data_dir: str) -> tuple:
    """Load ``(train, eval)`` for ``cifar10``, ``cifar100`` or ``svhn``."""
    if name == "cifar10":
        train_files = _find(data_dir, [f"data_batch_{i}.bin" for i in range(1, 6)])
        test_files = _find(data_dir, ["test_batch.bin"])
        parse, classes = parse_cifar10_bin, 10
    elif name == "cifar100":
        train_files = _find(data_dir, ["train.bin"])
        test_files = _find(data_dir, ["test.bin"])
        parse, classes = parse_cifar100_bin, 100
    elif name == "svhn":
        train_files = _find(data_dir, ["train.bin"])
        test_files = _find(data_dir, ["test.bin"])
        parse, classes = parse_svhn_bin, 10
    else:
        raise DataError(f"unknown dataset {name!r}")
    train = [r for p in train_files for r in parse(_read(p))]
    test = [r for p in test_files for r in parse(_read(p))]
    return Dataset.from_records(train, classes), Dataset.from_records(test, classes)


# ---------------------------------------------------------------------------
# synthetic shapes

SHAPES = ("rectangle", "disk", "cross", "ring")


def _draw(shape, extent, rng: Rng) -> np.ndarray:
    yy, xx = np.mgrid[0:extent, 0:extent]
    if shape == "rectangle":
        h = int(rng.integers(extent * 7 // 16, extent * 10 // 16 + 1))
        w = int(rng.integers(extent * 7 // 16, extent * 10 // 16 + 1))
        top = int(rng.integers(1, extent - h))
        left = int(rng.integers(1, extent - w))
        return (yy >= top) & (yy < top + h) & (xx >= left) & (xx < left + w)
    r = rng.uniform(extent * 0.12, extent * 0.19)
    cy = rng.uniform(r + 1, extent - r - 1)
    cx = rng.uniform(r + 1, extent - r - 1)
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    if shape == "disk":
        return d2 <= r * r
    if shape == "ring":
        return (d2 <= (1.6 * r) ** 2) & (d2 >= (0.9 * r) ** 2)
    arm = max(1, int(r / 3))
    return ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= 1.6 * r)) | \
           ((np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= 1.6 * r))


def synth_dataset(n: int, classes: int = 2, extent: int = 32, rng: Rng | None = None) -> tuple:
    """Deterministic shapes on dark noise, split 80/20 (train size floored).

    Class 0 is an axis-aligned bright rectangle, class 1 a bright disk
    (then cross, ring for more classes). Labels alternate so classes are
    balanced; size, position and colour are jittered by ``rng``.
    """
    if not 2 <= classes <= len(SHAPES):
        raise DataError(f"synthetic data supports 2..{len(SHAPES)} classes")
    if n < 2 * classes:
        raise DataError(f"need at least {2 * classes} samples for {classes} classes")
    rng = rng if rng is not None else Rng(0)
    labels = np.arange(n) % classes
    images = np.empty((n, 3, extent, extent), np.float32)
    for i, label in enumerate(labels):
        noise = rng.uniform(0.0, 0.25, (3, extent, extent))
        mask = _draw(SHAPES[label], extent, rng)
        colour = rng.uniform(0.7, 1.0, 3)[:, None, None]
        images[i] = np.where(mask[None], colour, noise)
    n_train = (n * 4) // 5
    return (Dataset(images[:n_train], labels[:n_train], classes),
            Dataset(images[n_train:], labels[n_train:], classes))


# ---------------------------------------------------------------------------
# batching


def batches(dataset: Dataset, batch_size: int, shuffle: bool = False, rng: Rng | None = None,
            meta: DatasetMeta | None = None, augment=None):
    """Yield ``(Tensor[N,3,H,W], labels)`` covering every item once.

    The final partial batch is kept. Normalization by ``meta`` happens
    before the optional per-image ``augment`` callable.
    """
    if batch_size < 1:
        raise DataError("batch size must be >= 1")
    n = len(dataset)
    if n == 0:
        raise DataError("dataset is empty")
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        x = dataset.images[idx]
        if meta is not None:
            x = normalize(x, meta)
        if augment is not None:
            x = np.stack([augment(img) for img in x])
        yield Tensor(x, dtype=np.float32), dataset.labels[idx]
