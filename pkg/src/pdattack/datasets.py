"""Synthetic datasets, the plain-text dataset file format and an IDX reader.

Dataset file layout::

    <n_features> <n_samples> <n_classes>
    f_1 f_2 ... f_n label
    ...

Feature values are written with 17 significant digits and always lie in
``[0, 1]``.
"""

import gzip
import struct

import numpy as np
from sklearn.datasets import make_blobs, make_moons

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _to_unit_box(X, pad=0.1):
    """Affinely map each feature to ``[pad, 1 - pad]`` and clamp to the unit box."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip(pad + (1.0 - 2.0 * pad) * (X - lo) / span, 0.0, 1.0)


def blobs(n_samples=200, n_features=2, n_classes=2, noise=1.0, seed=0):
    """Isotropic Gaussian clusters rescaled into the unit box."""
    X, y = make_blobs(n_samples=n_samples, n_features=n_features, centers=n_classes,
                      cluster_std=noise, random_state=seed)
    return _to_unit_box(X), y.astype(np.int64)


def moons(n_samples=500, noise=0.1, seed=0):
    """Two interleaving half circles rescaled into the unit box."""
    X, y = make_moons(n_samples=n_samples, noise=noise, random_state=seed)
    return _to_unit_box(X), y.astype(np.int64)


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path):
    """Read an IDX file (optionally gzipped) into an array.

    Only unsigned-byte payloads are supported, which covers the MNIST-style
    image (magic ``0x00000803``) and label (magic ``0x00000801``) files.
    """
    with _open(path) as fh:
        header = fh.read(4)
        if len(header) != 4:
            raise ValueError(f"{path}: truncated IDX header")
        magic = struct.unpack(">I", header)[0]
        if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
            raise ValueError(f"{path}: unsupported IDX magic 0x{magic:08x}")
        ndim = magic & 0xFF
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {int(np.prod(dims))} values, found {data.size}")
    return data.reshape(dims)


def load_idx(images_path, labels_path, limit=None):
    """Images flattened and scaled to ``[0, 1]`` plus integer labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim < 2 or labels.ndim != 1:
        raise ValueError("expected an image file and a label file")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if limit is not None:
        X, y = X[:limit], y[:limit]
    return X, y


def write_idx(path, array):
    """Write a uint8 array as an IDX file (used to build fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = IDX_LABELS_MAGIC if array.ndim == 1 else IDX_IMAGES_MAGIC
    if array.ndim not in (1, 3):
        raise ValueError("IDX writer handles 1-D labels or 3-D image stacks")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def save_dataset(path, X, y, n_classes=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be 2-D with one label per row")
    if np.any(X < 0) or np.any(X > 1):
        raise ValueError("features must lie in [0, 1]")
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    lines = [f"{X.shape[1]} {X.shape[0]} {n_classes}"]
    for row, label in zip(X, y):
        lines.append(" ".join(f"{v:.17g}" for v in row) + f" {label}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path):
    """Returns ``(X, y, n_classes)``."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: bad dataset header")
        n_features, n_samples, n_classes = (int(h) for h in header)
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != n_samples:
        raise ValueError(f"{path}: header announces {n_samples} rows, found {len(rows)}")
    if any(len(r) != n_features + 1 for r in rows):
        raise ValueError(f"{path}: every row needs {n_features} features and a label")
    X = np.array([[float(v) for v in r[:-1]] for r in rows]).reshape(n_samples, n_features)
    y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return X, y, n_classes
