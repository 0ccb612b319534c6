"""Datasets: MNIST IDX files, splitting, row chunking, batching and XOR."""

from dataclasses import dataclass
import struct

import numpy as np

from .layers import S2TCoder, s2t_encode

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
ROWS = COLS = 28


class IDXFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Labelled samples: ``inputs`` (n, features) in [0, 1], integer ``labels`` (n,)."""

    inputs: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, index, name=None):
        return Dataset(self.inputs[index], self.labels[index], name or self.name)


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def load_idx_images(path):
    """Read an IDX3 image file into a (count, 784) float array scaled to [0, 1]."""
    raw = _read(path)
    if len(raw) < 16:
        raise IDXFormatError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    if (rows, cols) != (ROWS, COLS):
        raise IDXFormatError(f"{path}: images are {rows}x{cols}, expected {ROWS}x{COLS}")
    size = count * rows * cols
    if len(raw) - 16 < size:
        raise IDXFormatError(f"{path}: truncated payload ({len(raw) - 16} of {size} bytes)")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=size, offset=16)
    return pixels.reshape(count, rows * cols).astype(float) / 255.0


def load_idx_labels(path):
    raw = _read(path)
    if len(raw) < 8:
        raise IDXFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    if len(raw) - 8 < count:
        raise IDXFormatError(f"{path}: truncated payload ({len(raw) - 8} of {count} bytes)")
    labels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise IDXFormatError(f"{path}: label {labels.max()} outside 0-9")
    return labels


def load_mnist(images_path, labels_path, name="mnist", binarize=False):
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IDXFormatError(f"{len(images)} images but {len(labels)} labels")
    if binarize:
        images = (images >= 0.5).astype(float)
    return Dataset(images, labels, name)


def write_idx_images(path, images):
    """Write (count, 784) pixels in [0, 1] (or uint8) as an IDX3 file."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    images = images.reshape(len(images), ROWS * COLS)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, len(images), ROWS, COLS))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise ValueError("labels must lie in 0-9")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def random_split(dataset, train_count, seed):
    """Draw ``train_count`` samples at random for training; the rest is the test set."""
    n = len(dataset)
    if not 0 <= train_count <= n:
        raise ValueError(f"cannot draw {train_count} training samples from {n}")
    order = np.random.default_rng(seed).permutation(n)
    return (dataset.subset(np.sort(order[:train_count]), f"{dataset.name}-train"),
            dataset.subset(np.sort(order[train_count:]), f"{dataset.name}-test"))


def chunk_image(pixels):
    """Rows of a 28x28 image as 28 time steps, shape (28, 28)."""
    pixels = np.asarray(pixels, dtype=float)
    if pixels.shape != (ROWS * COLS,):
        raise ValueError(f"expected 784 pixels, got shape {pixels.shape}")
    return s2t_encode(pixels, S2TCoder(COLS, ROWS))


def one_hot(labels, classes=10):
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def iterate_batches(dataset, batch_size, rng):
    """Yield ``(inputs, labels)`` mini-batches in an order reshuffled by ``rng``."""
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.inputs[idx], dataset.labels[idx]


@dataclass(frozen=True)
class XorSample:
    sequence: tuple
    target: int

    def __post_init__(self):
        if self.target != (self.sequence[0] ^ self.sequence[1]):
            raise ValueError("XOR target must equal x(0) xor x(1)")


def xor_dataset():
    return [XorSample((a, b), a ^ b) for a in (0, 1) for b in (0, 1)]


def xor_as_dataset():
    samples = xor_dataset()
    return Dataset(np.array([s.sequence for s in samples], dtype=float),
                   np.array([s.target for s in samples]), "xor")
