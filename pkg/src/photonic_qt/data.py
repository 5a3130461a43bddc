"""MNIST IDX ingestion and stratified subsetting."""

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, IDXFormatError, InvalidParameterError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "PHOTONIC_QT_DATA_DIR"
_DEFAULT_DATA_DIR = Path(__file__).resolve().parents[2] / "data" / "mnist"


@dataclass
class DatasetSplit:
    images: np.ndarray  # (n, 28, 28) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64 in 0..9
    tag: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise InvalidParameterError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise InvalidParameterError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise InvalidParameterError("labels must lie in 0..9")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx, tag: str | None = None) -> "DatasetSplit":
        return DatasetSplit(self.images[idx], self.labels[idx], self.tag if tag is None else tag)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(raw: bytes) -> np.ndarray:
    """Parse an unsigned-byte IDX payload (images or labels) into an array."""
    if len(raw) < 8:
        raise IDXFormatError("truncated header", len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IMAGES_MAGIC:
        ndim = 3
    elif magic == LABELS_MAGIC:
        ndim = 1
    else:
        raise IDXFormatError(f"bad magic number 0x{magic:08x}", 0)
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IDXFormatError("truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    n_bytes = int(np.prod(dims))
    if len(raw) < header_len + n_bytes:
        raise IDXFormatError(f"payload truncated: need {n_bytes} bytes after header", len(raw))
    if len(raw) > header_len + n_bytes:
        raise IDXFormatError("trailing bytes after payload", header_len + n_bytes)
    return np.frombuffer(raw, dtype=np.uint8, count=n_bytes, offset=header_len).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 3:
        header = struct.pack(">IIII", IMAGES_MAGIC, *array.shape)
    elif array.ndim == 1:
        header = struct.pack(">II", LABELS_MAGIC, *array.shape)
    else:
        raise InvalidParameterError(f"IDX writer supports 1-D labels or 3-D images, got {array.ndim}-D")
    payload = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def load_idx(path) -> np.ndarray:
    """Images come back as float64 scaled to [0, 1]; labels as int64 checked against 0..9."""
    arr = parse_idx(_read_bytes(path))
    if arr.ndim == 3:
        return arr.astype(np.float64) / 255.0
    labels = arr.astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise InvalidParameterError(f"label {labels[bad]} at position {bad} outside 0..9 in {path}")
    return labels


def load_pair(images_path, labels_path, tag: str = "") -> DatasetSplit:
    return DatasetSplit(load_idx(images_path), load_idx(labels_path), tag)


def data_dir(override=None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else _DEFAULT_DATA_DIR


def load_pool(directory=None) -> DatasetSplit:
    """Concatenate every ``<prefix>-images-idx3-ubyte[.gz]`` / labels pair found in the directory."""
    directory = data_dir(directory)
    pairs = []
    for img in sorted(directory.glob("*-images-idx3-ubyte*")):
        prefix = img.name.split("-images-idx3-ubyte")[0]
        suffix = img.name.split("-images-idx3-ubyte")[1]
        lab = directory / f"{prefix}-labels-idx1-ubyte{suffix}"
        if lab.exists():
            pairs.append(load_pair(img, lab, prefix))
    if not pairs:
        raise FileNotFoundError(
            f"no IDX image/label pairs under {directory}; set {DATA_DIR_ENV} or pass a data directory"
        )
    return DatasetSplit(
        np.concatenate([p.images for p in pairs]),
        np.concatenate([p.labels for p in pairs]),
        "pool",
    )


def _class_quota(n: int, n_classes: int = 10) -> np.ndarray:
    quota = np.full(n_classes, n // n_classes)
    quota[: n % n_classes] += 1
    return quota


def subset(dataset: DatasetSplit, n_train: int, n_test: int, seed: int):
    """Disjoint, class-stratified train/test draws; same seed gives the same indices."""
    if n_train < 0 or n_test < 0:
        raise InvalidParameterError("subset sizes must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    q_train, q_test = _class_quota(n_train), _class_quota(n_test)
    train_idx, test_idx = [], []
    for cls in range(10):
        members = np.flatnonzero(dataset.labels == cls)
        need = q_train[cls] + q_test[cls]
        if need > len(members):
            raise CapacityError(f"class {cls} has {len(members)} samples, {need} requested")
        chosen = rng.permutation(members)[:need]
        train_idx.append(chosen[: q_train[cls]])
        test_idx.append(chosen[q_train[cls] :])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    return dataset.take(train_idx, "train"), dataset.take(test_idx, "test")
