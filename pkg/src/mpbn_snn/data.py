"""Dataset parsing (IDX, CIFAR binary), synthetic data and batch iteration."""
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ConfigError(f"images must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ConfigError("one label per image required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigError("labels out of range for class_count")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ConfigError("image values must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.class_count)


def parse_idx(buf):
    """Parse an IDX file: 3-D uint8 images -> (N,1,H,W) floats, or 1-D uint8 labels."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise ParseError("truncated IDX magic", len(buf))
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise ParseError(f"bad IDX magic 0x{magic:08x}", 0)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ParseError("truncated IDX dimension header", len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    expected = math.prod(dims)
    payload = len(buf) - header
    if payload != expected:
        raise ParseError(
            f"IDX header declares {expected} payload bytes, found {payload}", header + min(payload, expected)
        )
    data = np.frombuffer(buf, dtype=np.uint8, offset=header, count=expected)
    if ndim == 1:
        return data.astype(np.int64)
    return (data.reshape(dims[0], 1, dims[1], dims[2]) / 255.0).astype(np.float32)


def write_idx(array):
    """Serialize a uint8 array (1-D labels or 3-D images) in IDX format."""
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 1:
        magic = IDX_LABELS_MAGIC
    elif array.ndim == 3:
        magic = IDX_IMAGES_MAGIC
    else:
        raise ConfigError(f"IDX writer supports 1-D or 3-D arrays, got {array.ndim}-D")
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def parse_cifar_bin(buf, class_count=10):
    buf = bytes(buf)
    if len(buf) == 0 or len(buf) % CIFAR_RECORD:
        raise ParseError(
            f"CIFAR binary length {len(buf)} is not a positive multiple of {CIFAR_RECORD}",
            len(buf) - len(buf) % CIFAR_RECORD,
        )
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() >= class_count:
        bad = int(np.argmax(labels >= class_count))
        raise ParseError(f"label {labels[bad]} >= class count {class_count}", bad * CIFAR_RECORD)
    images = (raw[:, 1:].reshape(-1, 3, 32, 32) / 255.0).astype(np.float32)
    return Dataset(images, labels, class_count)


def write_cifar_bin(images_u8, labels):
    images_u8 = np.asarray(images_u8, dtype=np.uint8).reshape(len(labels), -1)
    if images_u8.shape[1] != CIFAR_RECORD - 1:
        raise ConfigError("CIFAR records need 3x32x32 pixels")
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images_u8], axis=1)
    return rec.tobytes()


def synthetic(seed, n, classes=4, shape=(1, 8, 8), noise=0.3, template_seed=1234):
    """Class-conditional Gaussian-blob images with balanced round-robin labels.

    Class templates depend only on ``template_seed`` and ``shape`` so that
    train and test splits drawn with different ``seed`` share them.
    """
    if classes < 2:
        raise ConfigError("synthetic data needs at least two classes")
    c, h, w = shape
    means = class_means(classes, shape, template_seed)
    labels = np.arange(n) % classes
    rng = np.random.default_rng(seed)
    images = means[labels] + noise * rng.standard_normal((n, c, h, w))
    return Dataset(np.clip(images, 0.0, 1.0).astype(np.float32), labels.astype(np.int64), classes)


def class_means(classes, shape, template_seed=1234):
    c, h, w = shape
    rng = np.random.default_rng(template_seed)
    yy, xx = np.mgrid[0:h, 0:w]
    means = np.empty((classes, c, h, w))
    for k in range(classes):
        for ch in range(c):
            cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
            sigma = rng.uniform(0.15, 0.3) * max(h, w)
            means[k, ch] = 0.15 + 0.7 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    return means


def train_test_synthetic(seed, n_train, n_test, classes=4, shape=(1, 8, 8), noise=0.3):
    ss = np.random.SeedSequence(seed)
    a, b = ss.spawn(2)
    return (synthetic(a, n_train, classes, shape, noise),
            synthetic(b, n_test, classes, shape, noise))


def augment(images, rng, flip=True, crop_pad=0):
    """Seeded horizontal flip and zero-padded random crop."""
    out = images.copy()
    n, _, h, w = out.shape
    if flip:
        mask = rng.random(n) < 0.5
        out[mask] = out[mask, :, :, ::-1]
    if crop_pad:
        padded = np.pad(out, ((0, 0), (0, 0), (crop_pad, crop_pad), (crop_pad, crop_pad)))
        dy = rng.integers(0, 2 * crop_pad + 1, n)
        dx = rng.integers(0, 2 * crop_pad + 1, n)
        for i in range(n):
            out[i] = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
    return out


def iterate_batches(dataset, batch_size, rng=None, shuffle=True, drop_last=False):
    n = len(dataset)
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            break
        yield dataset.images[idx], dataset.labels[idx]


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def load_directory(path):
    """Load a (train, test) pair from an MNIST-style IDX or CIFAR-10 binary directory."""
    if not os.path.isdir(path):
        raise ConfigError(f"dataset directory {path!r} does not exist")
    names = set(os.listdir(path))
    if all(f in names for pair in _MNIST_FILES.values() for f in pair):
        out = []
        for split in ("train", "test"):
            img_f, lab_f = _MNIST_FILES[split]
            images = parse_idx(_read(os.path.join(path, img_f)))
            labels = parse_idx(_read(os.path.join(path, lab_f)))
            if images.ndim != 4 or labels.ndim != 1 or len(images) != len(labels):
                raise ConfigError(f"inconsistent IDX {split} files in {path!r}")
            out.append(Dataset(images, labels, int(max(labels.max() + 1, 10))))
        return tuple(out)
    batches = sorted(f for f in names if f.startswith("data_batch") and f.endswith(".bin"))
    if batches and "test_batch.bin" in names:
        parts = [parse_cifar_bin(_read(os.path.join(path, f))) for f in batches]
        train = Dataset(np.concatenate([p.images for p in parts]),
                        np.concatenate([p.labels for p in parts]), 10)
        test = parse_cifar_bin(_read(os.path.join(path, "test_batch.bin")))
        return train, test
    raise ConfigError(f"{path!r} holds neither MNIST IDX files nor CIFAR-10 binaries")
