"""Dataset ingestion and classical preprocessing.

IDX parsing, exact linear 28x28 -> 8x8 downsampling, random projection
with train-set-only normalisation, class filtering/splitting, and the
synthetic Gaussian-blob generator used to keep external downloads out of
the test path.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, IdxFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IMAGE_SIDE = 28
TARGET_SIDE = 8


@dataclass
class RawDataset:
    """28x28 grayscale images scaled to [0, 1] plus integer labels."""

    images: np.ndarray  # (n, 28, 28) float64
    labels: np.ndarray  # (n,) int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.images.ndim != 3 or self.images.shape[1:] != (IMAGE_SIDE, IMAGE_SIDE):
            raise ValueError(f"images must be (n, {IMAGE_SIDE}, {IMAGE_SIDE})")
        if len(self.images) != len(self.labels):
            raise ValueError("image/label count mismatch")

    def __len__(self):
        return len(self.images)


@dataclass
class ProjectedDataset:
    """Random-projection features for every item of a dataset.

    ``norm_constant`` is 3x the standard deviation of the pooled training
    features; it is computed from training rows only and applied to all.
    """

    inputs: np.ndarray  # (n, m) float64, already normalised
    labels: np.ndarray  # (n,) int
    projection: np.ndarray | None  # (64, m) or None for synthetic data
    norm_constant: float
    seed: int | None = None

    def __len__(self):
        return len(self.inputs)


def _read_exact(f, n_bytes, path, what):
    data = f.read(n_bytes)
    if len(data) != n_bytes:
        raise IdxFormatError(
            f"{path}: truncated while reading {what} "
            f"(wanted {n_bytes} bytes at offset {f.tell() - len(data)})",
            offset=f.tell() - len(data),
        )
    return data


def load_idx(images_path, labels_path):
    """Parse a big-endian IDX image/label file pair into a RawDataset."""
    with open(images_path, "rb") as f:
        magic, n_images, rows, cols = struct.unpack(
            ">iiii", _read_exact(f, 16, images_path, "image header")
        )
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: unexpected magic 0x{magic:08x} at offset 0 "
                f"(expected 0x{IDX_IMAGES_MAGIC:08x})",
                offset=0,
            )
        if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
            raise IdxFormatError(
                f"{images_path}: expected {IMAGE_SIDE}x{IMAGE_SIDE} images, "
                f"got {rows}x{cols}",
                offset=8,
            )
        raw = _read_exact(f, n_images * rows * cols, images_path, "pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n_images, rows, cols)
    with open(labels_path, "rb") as f:
        magic, n_labels = struct.unpack(
            ">ii", _read_exact(f, 8, labels_path, "label header")
        )
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: unexpected magic 0x{magic:08x} at offset 0 "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})",
                offset=0,
            )
        labels = np.frombuffer(
            _read_exact(f, n_labels, labels_path, "label data"), dtype=np.uint8
        )
    if n_images != n_labels:
        raise IdxFormatError(
            f"count mismatch: {n_images} images vs {n_labels} labels"
        )
    return RawDataset(images=images / 255.0, labels=labels.astype(int))


def _downsample_matrix():
    """8x28 area-weighted averaging map; rows sum to 1."""
    a = np.zeros((TARGET_SIDE, IMAGE_SIDE))
    ratio = IMAGE_SIDE / TARGET_SIDE  # 3.5 pixels per output cell
    for i in range(TARGET_SIDE):
        lo, hi = i * ratio, (i + 1) * ratio
        for j in range(IMAGE_SIDE):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                a[i, j] = overlap / ratio
    return a


_DOWNSAMPLE = _downsample_matrix()


def downsample(image):
    """Exact linear reduction 28x28 -> 8x8 by fractional-pixel averaging."""
    image = np.asarray(image, dtype=float)
    if image.shape[-2:] != (IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"expected {IMAGE_SIDE}x{IMAGE_SIDE} input")
    return _DOWNSAMPLE @ image @ _DOWNSAMPLE.T


def project_and_normalize(dataset, m_features, seed, train_indices):
    """Downsample, project with a random [-1, 1] matrix, and normalise.

    The projection is a (64, m) matrix with entries uniform on [-1, 1]
    drawn from ``seed``.  The normalisation constant is 3x the standard
    deviation of the pooled training features and never sees test rows.
    """
    if m_features < 1:
        raise ValueError("m_features must be >= 1")
    train_indices = np.asarray(train_indices, dtype=int)
    if train_indices.size == 0:
        raise DegenerateDataError("empty training set")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(TARGET_SIDE**2, m_features))
    small = downsample(dataset.images)
    flat = small.reshape(len(dataset), -1)
    projected = flat @ w
    std = float(np.std(projected[train_indices]))
    if std == 0.0:
        raise DegenerateDataError("degenerate normalization: zero feature std")
    norm_constant = 3.0 * std
    return ProjectedDataset(
        inputs=projected / norm_constant,
        labels=dataset.labels.copy(),
        projection=w,
        norm_constant=norm_constant,
        seed=seed,
    )


def filter_and_split(dataset, classes, n_train, n_test, seed):
    """Stratified class-filtered split into disjoint train/test index sets.

    Counts are divided as evenly as possible across the requested classes
    (remainders go to the smallest labels).  Raises naming the class when
    one cannot supply its share.
    """
    classes = sorted(int(c) for c in classes)
    labels = np.asarray(dataset.labels)
    rng = np.random.default_rng(seed)
    k = len(classes)
    train_share = {c: n_train // k for c in classes}
    test_share = {c: n_test // k for c in classes}
    for c in classes[: n_train % k]:
        train_share[c] += 1
    for c in classes[: n_test % k]:
        test_share[c] += 1
    train_idx, test_idx = [], []
    for c in classes:
        pool = np.flatnonzero(labels == c)
        need = train_share[c] + test_share[c]
        if len(pool) < need:
            raise DegenerateDataError(
                f"class {c}: insufficient samples (have {len(pool)}, need {need})"
            )
        pool = rng.permutation(pool)
        train_idx.append(pool[: train_share[c]])
        test_idx.append(pool[train_share[c] : need])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    return train_idx, test_idx


def synthetic_blobs(n_classes, n_per_class, dim, separation, seed, labels=None):
    """Isotropic Gaussian blobs with pairwise-equidistant class means.

    Class means sit at ``separation / sqrt(2) * e_c`` so every pair of
    means is exactly ``separation`` apart (requires dim >= n_classes).
    The pooled features are normalised to std 1/3, mirroring
    :func:`project_and_normalize`.
    """
    if dim < 1 or n_per_class < 1 or n_classes < 1:
        raise ValueError("n_classes, n_per_class and dim must be >= 1")
    if dim < n_classes:
        raise ValueError("dim must be >= n_classes to place equidistant means")
    if labels is None:
        labels = list(range(n_classes))
    if len(labels) != n_classes:
        raise ValueError("labels must have one entry per class")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(n_classes):
        mean = np.zeros(dim)
        mean[c] = separation / np.sqrt(2.0)
        xs.append(mean + rng.normal(size=(n_per_class, dim)))
        ys.append(np.full(n_per_class, labels[c], dtype=int))
    inputs = np.concatenate(xs)
    label_arr = np.concatenate(ys)
    order = rng.permutation(len(inputs))
    inputs, label_arr = inputs[order], label_arr[order]
    std = float(np.std(inputs))
    if std == 0.0:
        raise DegenerateDataError("degenerate normalization: zero feature std")
    norm_constant = 3.0 * std
    return ProjectedDataset(
        inputs=inputs / norm_constant,
        labels=label_arr,
        projection=None,
        norm_constant=norm_constant,
        seed=seed,
    )
