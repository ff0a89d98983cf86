"""Dataset ingestion (MNIST IDX, CIFAR-10 binary), splitting, binary encoding."""

from __future__ import annotations

import gzip
import os
import struct
import urllib.request
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)
MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)


def cache_root() -> str:
    return os.environ.get(
        "LOGICTREE_DATA", os.path.join(os.path.expanduser("~"), ".cache", "logictree")
    )


@dataclass(frozen=True)
class LabeledImageSet:
    """Images as floats in [0, 1], shape (N, channels, h, w); labels 0..9."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx) -> "LabeledImageSet":
        return LabeledImageSet(self.images[idx], self.labels[idx])


@dataclass(frozen=True)
class BinaryEncodedSet:
    """Thermometer-coded bit planes, shape (N, planes, h, w), values {0, 1}."""

    planes: np.ndarray
    labels: np.ndarray
    bits: int

    def __len__(self):
        return self.planes.shape[0]

    def subset(self, idx) -> "BinaryEncodedSet":
        return BinaryEncodedSet(self.planes[idx], self.labels[idx], self.bits)


# ---------------------------------------------------------------------------
# Loaders


def _read_idx(path: str, expect_magic: int, expect_dims: int) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(4)
        if len(header) < 4:
            raise ValueError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">i", header)
        if magic != expect_magic:
            raise ValueError(f"{path}: bad IDX magic {magic:#010x}, want {expect_magic:#010x}")
        dims_raw = f.read(4 * expect_dims)
        if len(dims_raw) < 4 * expect_dims:
            raise ValueError(f"{path}: truncated IDX dimension block")
        dims = struct.unpack(f">{expect_dims}i", dims_raw)
        data = np.frombuffer(f.read(), dtype=np.uint8)
    want = int(np.prod(dims))
    if data.size != want:
        raise ValueError(f"{path}: payload has {data.size} bytes, header promises {want}")
    return data.reshape(dims)


def load_mnist_idx(images_path: str, labels_path: str) -> LabeledImageSet:
    """Read the big-endian IDX pair; pixels scaled into [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    return LabeledImageSet(
        images=(images[:, None, :, :] / 255.0).astype(np.float32),
        labels=labels.astype(np.int64),
    )


def load_cifar10_bin(batch_paths) -> LabeledImageSet:
    """Read CIFAR-10 binary batches: 1 label byte + 3072 channel-major pixels."""
    record = 1 + 3072
    images, labels = [], []
    for path in batch_paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0 or raw.size % record:
            raise ValueError(f"{path}: size {raw.size} is not a multiple of {record}")
        rows = raw.reshape(-1, record)
        labels.append(rows[:, 0].astype(np.int64))
        images.append(rows[:, 1:].reshape(-1, 3, 32, 32))
    return LabeledImageSet(
        images=(np.concatenate(images) / 255.0).astype(np.float32),
        labels=np.concatenate(labels),
    )


def load_dataset(name: str, split: str, root: str | None = None) -> LabeledImageSet:
    """Load a named dataset split from the cache directory."""
    root = root or cache_root()
    name = name.lower()
    if name == "mnist":
        base = os.path.join(root, "mnist")
        prefix = "train" if split == "train" else "t10k"
        return load_mnist_idx(
            os.path.join(base, f"{prefix}-images-idx3-ubyte"),
            os.path.join(base, f"{prefix}-labels-idx1-ubyte"),
        )
    if name == "cifar10":
        base = os.path.join(root, "cifar10")
        files = CIFAR10_TRAIN_FILES if split == "train" else CIFAR10_TEST_FILES
        return load_cifar10_bin([os.path.join(base, f) for f in files])
    raise ValueError(f"unknown dataset {name!r}")


# ---------------------------------------------------------------------------
# Encoding


def threshold_encode(
    images: np.ndarray, bits: int, thresholds: np.ndarray | None = None
) -> np.ndarray:
    """Thermometer-code pixels into 2^bits - 1 planes per input channel.

    The default thresholds are evenly spaced: t_j = j / 2^bits for
    j = 1 .. 2^bits - 1; plane j is 1 where pixel > t_j, so higher planes
    switch off monotonically. Custom thresholds override the spacing.
    """
    if bits not in (1, 2, 3, 4, 5):
        raise ValueError(f"bits={bits} outside 1..5")
    levels = 2 ** bits - 1
    if thresholds is None:
        thresholds = np.arange(1, levels + 1) / (levels + 1)
    else:
        thresholds = np.asarray(thresholds, dtype=np.float64)
        if thresholds.shape != (levels,):
            raise ValueError(f"need {levels} thresholds, got {thresholds.shape}")
    n, c, h, w = images.shape
    planes = (images[:, :, None, :, :] > thresholds[None, None, :, None, None])
    return planes.reshape(n, c * levels, h, w).astype(np.uint8)


def encode_set(dataset: LabeledImageSet, bits: int, thresholds=None) -> BinaryEncodedSet:
    return BinaryEncodedSet(
        planes=threshold_encode(dataset.images, bits, thresholds),
        labels=dataset.labels,
        bits=bits,
    )


def fixed_feature_frontend(
    images: np.ndarray, kernels: np.ndarray, thresholds: np.ndarray
) -> np.ndarray:
    """Optional fixed-kernel binary feature hook for the large input encodings.

    Convolves each input channel with each user-supplied kernel (valid mode,
    no learned parameters) and thresholds the responses into extra bit planes.
    No kernels ship with the library; callers own the filter bank.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if kernels.ndim != 3:
        raise ValueError("kernels must be (count, kh, kw)")
    if thresholds.shape != (kernels.shape[0],):
        raise ValueError("one threshold per kernel required")
    n, c, h, w = images.shape
    kh, kw = kernels.shape[1:]
    oh, ow = h - kh + 1, w - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(images, (kh, kw), axis=(2, 3))
    resp = np.einsum("nchwij,kij->nckhw", win, kernels)
    out = resp > thresholds[None, None, :, None, None]
    return out.reshape(n, c * kernels.shape[0], oh, ow).astype(np.uint8)


# ---------------------------------------------------------------------------
# Splits


def split_validation(dataset, n_val: int, seed: int = 0):
    """Deterministic disjoint (train, val) split; val drawn uniformly."""
    n = len(dataset)
    if not 0 < n_val < n:
        raise ValueError(f"n_val={n_val} out of range for {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[n_val:]), dataset.subset(perm[:n_val])


DEFAULT_VAL_SIZE = {"mnist": 10_000, "cifar10": 5_000}


# ---------------------------------------------------------------------------
# Fetch


def _download(url: str, dest: str) -> None:
    tmp = dest + ".part"
    with urllib.request.urlopen(url) as r, open(tmp, "wb") as f:
        while True:
            chunk = r.read(1 << 20)
            if not chunk:
                break
            f.write(chunk)
    os.replace(tmp, dest)


def fetch(name: str, root: str | None = None, mirrors=None) -> str:
    """Download a dataset into the cache; returns the dataset directory.

    MNIST pulls the four gzipped IDX files and decompresses them; CIFAR-10
    pulls the binary tarball and extracts the batch files.
    """
    root = root or cache_root()
    name = name.lower()
    if name == "mnist":
        base = os.path.join(root, "mnist")
        os.makedirs(base, exist_ok=True)
        for fname in MNIST_FILES:
            out = os.path.join(base, fname)
            if os.path.exists(out):
                continue
            gz = out + ".gz"
            last_err = None
            for mirror in mirrors or MNIST_MIRRORS:
                try:
                    _download(mirror + fname + ".gz", gz)
                    last_err = None
                    break
                except OSError as e:  # pragma: no cover - depends on network
                    last_err = e
            if last_err is not None:
                raise OSError(f"could not fetch {fname} from any mirror: {last_err}")
            with gzip.open(gz, "rb") as src, open(out, "wb") as dst:
                dst.write(src.read())
            os.remove(gz)
        return base
    if name == "cifar10":
        import tarfile

        base = os.path.join(root, "cifar10")
        os.makedirs(base, exist_ok=True)
        wanted = CIFAR10_TRAIN_FILES + CIFAR10_TEST_FILES
        if all(os.path.exists(os.path.join(base, f)) for f in wanted):
            return base
        tarball = os.path.join(base, "cifar-10-binary.tar.gz")
        if not os.path.exists(tarball):
            _download(mirrors[0] if mirrors else CIFAR10_URL, tarball)
        with tarfile.open(tarball) as tar:
            for member in tar.getmembers():
                fname = os.path.basename(member.name)
                if fname in wanted:
                    with tar.extractfile(member) as src, open(
                        os.path.join(base, fname), "wb"
                    ) as dst:
                        dst.write(src.read())
        return base
    raise ValueError(f"unknown dataset {name!r}")
