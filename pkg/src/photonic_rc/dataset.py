"""MNIST IDX parsing, normalization and deterministic train/validation/test splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .numerics import RngSeed

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 28

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


class IdxError(ValueError):
    """Base class for malformed IDX containers."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxDimensionError(IdxError):
    pass


class IdxLabelRangeError(IdxError):
    pass


class DatasetMismatchError(ValueError):
    """Image and label files disagree on the number of items."""


def _header(data: bytes, n_dims: int, magic: int, kind: str) -> tuple[int, ...]:
    size = 4 + 4 * n_dims
    if len(data) < 4:
        raise IdxTruncatedError(f"{kind} file truncated: {len(data)} bytes, no magic number")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise IdxMagicError(
            f"wrong magic for {kind} file: expected 0x{magic:08x}, got 0x{got:08x}")
    if len(data) < size:
        raise IdxTruncatedError(f"{kind} file truncated inside header ({len(data)} < {size} bytes)")
    return struct.unpack(">" + "I" * n_dims, data[4:size])


def parse_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX3 image container into a ``(count, rows, cols)`` uint8 array."""
    count, rows, cols = _header(data, 3, IMAGE_MAGIC, "image")
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise IdxTruncatedError(
            f"image payload truncated: header declares {count}x{rows}x{cols} "
            f"({expected} bytes), stream has {len(data)}")
    if len(data) != expected:
        raise IdxDimensionError(
            f"image stream length {len(data)} does not match declared dimensions "
            f"{count}x{rows}x{cols} ({expected} bytes)")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX1 label container; every label must be a digit 0-9."""
    (count,) = _header(data, 1, LABEL_MAGIC, "label")
    expected = 8 + count
    if len(data) < expected:
        raise IdxTruncatedError(
            f"label payload truncated: header declares {count} labels, "
            f"stream has {len(data) - 8}")
    if len(data) != expected:
        raise IdxDimensionError(
            f"label stream length {len(data)} does not match declared count {count}")
    labels = np.frombuffer(data, dtype=np.uint8, offset=8).copy()
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise IdxLabelRangeError(f"label {labels[bad]} at index {bad} is out of range 0-9")
    return labels


def serialize_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    return struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols) + images.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes()


def read_bytes(path) -> bytes:
    """Read a file, gunzipping transparently when it ends in ``.gz``."""
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


class Image(NamedTuple):
    pixels: np.ndarray  # (28, 28) in [0, 1], row 0 at the top
    label: int


@dataclass
class Split:
    """A stack of normalized images with labels.

    ``labels`` goes through an optional access hook; the harness uses it to
    audit that test labels are only read at final evaluation.
    """

    images: np.ndarray
    _labels: np.ndarray
    name: str = ""
    on_label_access: Callable[[str], None] | None = field(default=None, repr=False)

    @property
    def labels(self) -> np.ndarray:
        if self.on_label_access is not None:
            self.on_label_access(self.name)
        return self._labels

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> Image:
        return Image(self.images[i], int(self.labels[i]))


@dataclass
class Dataset:
    train: Split
    validation: Split
    test: Split
    split_seed: int = 0
    audit: list[str] = field(default_factory=list, repr=False)

    def mark(self, event: str) -> None:
        self.audit.append(event)


def normalize(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def load_dataset(image_paths: Sequence, label_paths: Sequence, validation_size: int = 10_000,
                 seed=0) -> Dataset:
    """Load ``(train, test)`` IDX file pairs into a :class:`Dataset`.

    The training file is shuffled with ``seed`` (stream ``"shuffle"``) and the
    last ``validation_size`` shuffled images become the validation split.
    The test file is never shuffled.
    """
    if len(image_paths) != 2 or len(label_paths) != 2:
        raise ValueError("expected (train, test) paths for both images and labels")
    seed = seed if isinstance(seed, RngSeed) else RngSeed(int(seed), "shuffle")

    arrays = []
    for img_path, lab_path in zip(image_paths, label_paths):
        images = parse_idx_images(read_bytes(img_path))
        labels = parse_idx_labels(read_bytes(lab_path))
        if images.shape[0] != labels.shape[0]:
            raise DatasetMismatchError(
                f"{img_path} has {images.shape[0]} images but {lab_path} has "
                f"{labels.shape[0]} labels")
        arrays.append((normalize(images), labels.astype(np.int64)))
    (tr_x, tr_y), (te_x, te_y) = arrays

    if not 0 <= validation_size <= tr_x.shape[0]:
        raise ValueError(f"validation_size {validation_size} outside [0, {tr_x.shape[0]}]")
    order = seed.generator().permutation(tr_x.shape[0])
    cut = tr_x.shape[0] - validation_size
    train_idx, val_idx = order[:cut], order[cut:]

    ds = Dataset(
        train=Split(tr_x[train_idx], tr_y[train_idx], "train"),
        validation=Split(tr_x[val_idx], tr_y[val_idx], "validation"),
        test=Split(te_x, te_y, "test"),
        split_seed=seed.seed,
    )
    ds.test.on_label_access = lambda name: ds.audit.append(f"read_labels:{name}")
    return ds


def mnist_paths(data_dir) -> tuple[list[Path], list[Path]]:
    """Locate the four MNIST files (gzipped or not) inside ``data_dir``."""
    data_dir = Path(data_dir)

    def find(name: str) -> Path:
        for candidate in (data_dir / name, data_dir / name.removesuffix(".gz")):
            if candidate.exists():
                return candidate
        raise FileNotFoundError(f"{name} not found in {data_dir}")

    return ([find(MNIST_FILES["train_images"]), find(MNIST_FILES["test_images"])],
            [find(MNIST_FILES["train_labels"]), find(MNIST_FILES["test_labels"])])


def load_mnist(data_dir, validation_size: int = 10_000, seed=0) -> Dataset:
    images, labels = mnist_paths(data_dir)
    return load_dataset(images, labels, validation_size, seed)
