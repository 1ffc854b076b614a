"""Dataset ingestion: IDX image files, CSV tables, and built-in synthetic
sets (two moons, and a 28x28 ten-class digit set that stands in for MNIST
when the real files are not on disk).

Inputs are always float64 matrices scaled into the declared domain (images
to [0, 1]); labels are integer class indices.
"""

from __future__ import annotations

import csv
import gzip
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ENV_DATA_DIR = "BERNET_DATA_DIR"

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Raised for malformed dataset files; message carries the offset."""


@dataclass
class Dataset:
    inputs: np.ndarray  # (samples, features), within the declared domain
    labels: np.ndarray  # (samples,) integer class indices
    name: str
    n_classes: int

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a (samples, features) matrix")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must be one integer per sample")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs must be finite")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.name, self.n_classes)

    def domain(self) -> tuple[np.ndarray, np.ndarray]:
        """Declared input domain: the unit box (all built-in sets use it)."""
        d = self.n_features
        return np.zeros(d), np.ones(d)


# --- IDX --------------------------------------------------------------------


def _read_file(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _be32(data: bytes, offset: int, path) -> int:
    if offset + 4 > len(data):
        raise DataFormatError(f"{path}: truncated header at byte {offset}")
    return int.from_bytes(data[offset : offset + 4], "big")


def load_idx(images_path, labels_path) -> Dataset:
    """Parse the big-endian IDX pair (images + labels); pixels scale to [0,1]."""
    img = _read_file(images_path)
    magic = _be32(img, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at byte 0, "
            f"expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    n = _be32(img, 4, images_path)
    rows = _be32(img, 8, images_path)
    cols = _be32(img, 12, images_path)
    expected = 16 + n * rows * cols
    if len(img) != expected:
        raise DataFormatError(
            f"{images_path}: payload is {len(img)} bytes, expected {expected} "
            f"(truncated at byte {min(len(img), expected)})"
        )
    lab = _read_file(labels_path)
    lmagic = _be32(lab, 0, labels_path)
    if lmagic != IDX_LABEL_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad label magic 0x{lmagic:08x} at byte 0, "
            f"expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    ln = _be32(lab, 4, labels_path)
    if len(lab) != 8 + ln:
        raise DataFormatError(
            f"{labels_path}: payload is {len(lab)} bytes, expected {8 + ln}"
        )
    if ln != n:
        raise DataFormatError(
            f"image/label count mismatch: {n} images vs {ln} labels"
        )
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(pixels.astype(np.float64) / 255.0, labels,
                   name=f"idx:{Path(images_path).name}", n_classes=10)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write (n, rows, cols) uint8 images in IDX format (test/tooling helper)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(IDX_IMAGE_MAGIC.to_bytes(4, "big"))
        f.write(n.to_bytes(4, "big"))
        f.write(rows.to_bytes(4, "big"))
        f.write(cols.to_bytes(4, "big"))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(IDX_LABEL_MAGIC.to_bytes(4, "big"))
        f.write(len(labels).to_bytes(4, "big"))
        f.write(labels.tobytes())


# --- CSV --------------------------------------------------------------------


def load_csv(path, label_col: str = "label",
             feature_cols: list[str] | None = None) -> Dataset:
    """Header-declared feature columns plus an integer label column.

    Rejects ragged rows, non-numeric cells, and non-finite values, naming the
    offending line.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if label_col not in header:
            raise DataFormatError(f"{path}: missing label column {label_col!r}")
        if feature_cols is None:
            feature_cols = [c for c in header if c != label_col]
        missing = [c for c in feature_cols if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing feature columns {missing}")
        fidx = [header.index(c) for c in feature_cols]
        lidx = header.index(label_col)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: line {lineno}: {len(row)} cells, expected {len(header)}"
                )
            try:
                feats = [float(row[i]) for i in fidx]
                label = int(float(row[lidx]))
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: non-numeric cell"
                ) from None
            if not all(math.isfinite(v) for v in feats):
                raise DataFormatError(f"{path}: line {lineno}: non-finite value")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    labels_arr = np.array(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise DataFormatError(f"{path}: negative class label")
    return Dataset(np.array(rows), labels_arr, name=f"csv:{Path(path).name}",
                   n_classes=int(labels_arr.max()) + 1)


def save_csv(path, dataset: Dataset) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i}" for i in range(dataset.n_features)] + ["label"])
        for row, label in zip(dataset.inputs, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


# --- synthetic sets -----------------------------------------------------------


def two_moons(n: int, noise: float = 0.08, seed: int = 0) -> Dataset:
    """Two interleaved half circles, scaled into the unit square."""
    rng = np.random.default_rng(seed)
    half = n // 2
    t1 = rng.uniform(0.0, np.pi, half)
    t2 = rng.uniform(0.0, np.pi, n - half)
    upper = np.stack([np.cos(t1), np.sin(t1)], axis=1)
    lower = np.stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)], axis=1)
    pts = np.vstack([upper, lower]) + rng.normal(0.0, noise, size=(n, 2))
    labels = np.concatenate([np.zeros(half, dtype=np.int64),
                             np.ones(n - half, dtype=np.int64)])
    perm = rng.permutation(n)
    pts, labels = pts[perm], labels[perm]
    span_lo = pts.min(axis=0)
    span = pts.max(axis=0) - span_lo
    pts = 0.02 + 0.96 * (pts - span_lo) / span
    return Dataset(pts, labels, name="two-moons", n_classes=2)


# 5x7 dot-matrix digit glyphs, upscaled onto a 28x28 canvas with random
# placement, intensity, and pixel noise.
_DIGIT_ROWS = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
]

_GLYPHS = np.stack([
    np.kron(np.array([[int(ch) for ch in row] for row in rows], dtype=np.float64),
            np.ones((3, 3)))
    for rows in _DIGIT_ROWS
])  # (10, 21, 15)


def synthetic_digits(n: int, seed: int = 0, noise: float = 0.12,
                     jitter: int = 2, image_size: int = 28) -> Dataset:
    """Deterministic 10-class digit images, MNIST-shaped (784 features).

    Glyphs are placed near the center with +/-jitter pixels of translation
    and a random intensity, then corrupted with Gaussian pixel noise; values
    are clipped to [0, 1].
    """
    rng = np.random.default_rng(seed)
    gh, gw = _GLYPHS.shape[1:]
    base_r = (image_size - gh) // 2
    base_c = (image_size - gw) // 2
    labels = rng.integers(0, 10, size=n)
    images = np.zeros((n, image_size, image_size))
    rows = base_r + rng.integers(-jitter, jitter + 1, size=n)
    cols = base_c + rng.integers(-jitter, jitter + 1, size=n)
    rows = np.clip(rows, 0, image_size - gh)
    cols = np.clip(cols, 0, image_size - gw)
    intensity = rng.uniform(0.75, 1.0, size=n)
    for i in range(n):
        r, c = rows[i], cols[i]
        images[i, r : r + gh, c : c + gw] = intensity[i] * _GLYPHS[labels[i]]
    images += rng.normal(0.0, noise, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    return Dataset(images.reshape(n, -1), labels.astype(np.int64),
                   name="synth-digits", n_classes=10)


# --- MNIST resolution -----------------------------------------------------------

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def data_dir() -> Path:
    return Path(os.environ.get(ENV_DATA_DIR, "data"))


def find_mnist(split: str, directory=None) -> tuple[Path, Path] | None:
    """Locate the standard MNIST IDX pair (plain or .gz) if present."""
    base = Path(directory) if directory is not None else data_dir()
    images, labels = _MNIST_FILES[split]
    for suffix in ("", ".gz"):
        ip, lp = base / (images + suffix), base / (labels + suffix)
        if ip.exists() and lp.exists():
            return ip, lp
    return None


def load_mnist(split: str = "train", directory=None) -> Dataset:
    found = find_mnist(split, directory)
    if found is None:
        base = Path(directory) if directory is not None else data_dir()
        raise FileNotFoundError(
            f"MNIST {split} IDX files not found under {base} "
            f"(set {ENV_DATA_DIR} to the directory holding them)"
        )
    ds = load_idx(*found)
    ds.name = f"mnist-{split}"
    return ds


def load_digit_data(n_train: int, n_test: int, seed: int = 0) -> tuple[Dataset, Dataset, str]:
    """MNIST subsets when the files are available, otherwise synthetic digits.

    Returns (train, test, source) where source names what was actually used.
    """
    if find_mnist("train") is not None and find_mnist("test") is not None:
        rng = np.random.default_rng(seed)
        train = load_mnist("train")
        test = load_mnist("test")
        tr_idx = rng.choice(len(train), size=min(n_train, len(train)), replace=False)
        te_idx = rng.choice(len(test), size=min(n_test, len(test)), replace=False)
        return train.subset(tr_idx), test.subset(te_idx), "mnist"
    train = synthetic_digits(n_train, seed=seed)
    test = synthetic_digits(n_test, seed=seed + 1)
    return train, test, "synth-digits"
