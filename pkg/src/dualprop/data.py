"""Datasets: the IDX (MNIST) file format and synthetic Gaussian blobs."""

from dataclasses import dataclass
import gzip
import os
import struct

import numpy as np

from .errors import BadMagic, CountMismatch, TruncatedFile

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise CountMismatch(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx])


def _read(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw, magic, path):
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: header needs at least 8 bytes, got {len(raw)}")
    found, count = struct.unpack(">II", raw[:8])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header is truncated")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise TruncatedFile(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path):
    """Parse an IDX image/label pair; pixels are flattened and scaled to [0, 1]."""
    images = _parse_idx(_read(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read(labels_path), LABEL_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64))


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _find(directory, name):
    for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    return None


def load_mnist_dir(directory):
    """Load ``train-*`` (and ``t10k-*`` when present) IDX files from a directory.

    Returns ``(train, test)``; ``test`` is None when no test files exist.
    """
    img, lab = _find(directory, TRAIN_IMAGES), _find(directory, TRAIN_LABELS)
    if img is None or lab is None:
        raise FileNotFoundError(f"no {TRAIN_IMAGES}/{TRAIN_LABELS} in {directory}")
    train = load_mnist_idx(img, lab)
    timg, tlab = _find(directory, TEST_IMAGES), _find(directory, TEST_LABELS)
    test = load_mnist_idx(timg, tlab) if timg and tlab else None
    return train, test


def export_mlxtend_subset(directory):
    """Write the 5000-image MNIST sample bundled with mlxtend as IDX training files.

    Used where the full MNIST archive cannot be downloaded. Returns the
    directory.
    """
    from mlxtend.data import mnist_data

    X, y = mnist_data()
    os.makedirs(directory, exist_ok=True)
    write_idx_images(os.path.join(directory, TRAIN_IMAGES), X.reshape(-1, 28, 28).astype(np.uint8))
    write_idx_labels(os.path.join(directory, TRAIN_LABELS), y.astype(np.uint8))
    return directory


def synth_blobs(classes, dim, n_per_class, separation, seed):
    """Unit-variance Gaussian blobs around deterministic centers.

    Class ``c`` is centered at ``separation`` times the ``c``-th of a fixed set
    of orthonormal directions (drawn once from ``seed``), so class centers are
    pairwise ``separation * sqrt(2)`` apart.
    """
    if classes < 1 or dim < 1 or n_per_class < 1:
        raise ValueError("classes, dim and n_per_class must all be >= 1")
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((max(dim, classes), max(dim, classes))))[0]
    centers = separation * basis[:classes, :dim]
    inputs = np.concatenate([c + rng.standard_normal((n_per_class, dim)) for c in centers])
    labels = np.repeat(np.arange(classes), n_per_class)
    return Dataset(inputs, labels)


def split_holdout(dataset, fraction, seed):
    """Seed-shuffled split; the first ``fraction`` of the shuffled order is held out."""
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_hold = int(round(fraction * len(dataset)))
    return dataset.subset(np.sort(order[n_hold:])), dataset.subset(np.sort(order[:n_hold]))
