"""Datasets: CIFAR-10 binary batches, a synthetic Gaussian generator, and
flip/crop augmentation.

CIFAR-10 pixels are mapped to [0, 1] and standardized per channel with

    mean = (0.4914, 0.4822, 0.4465)
    std  = (0.2470, 0.2435, 0.2616)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataFormatError

CIFAR10_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR10_STD = np.array([0.2470, 0.2435, 0.2616])
CIFAR10_RECORD = 1 + 3 * 32 * 32
CIFAR10_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]


@dataclass
class ImageDataset:
    """Inputs of shape (count, ...) with integer labels in [0, class_count)."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ConfigurationError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigurationError("labels outside [0, class_count)")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "ImageDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return ImageDataset(self.images[indices], self.labels[indices], self.class_count)


# -- CIFAR-10 -----------------------------------------------------------------

def read_cifar10_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(pixels uint8 (n, 3, 32, 32), labels uint8 (n,))`` from one batch file."""
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(path, 0, "file not found")
    raw = np.fromfile(path, dtype=np.uint8)
    whole, rest = divmod(raw.size, CIFAR10_RECORD)
    if rest or whole == 0:
        raise DataFormatError(
            path, whole * CIFAR10_RECORD,
            f"truncated record ({rest} of {CIFAR10_RECORD} bytes)" if rest else "empty file",
        )
    records = raw.reshape(whole, CIFAR10_RECORD)
    labels = records[:, 0].copy()
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(path, bad * CIFAR10_RECORD, f"label byte {labels[bad]} > 9")
    return records[:, 1:].reshape(whole, 3, 32, 32).copy(), labels


def normalize_cifar10(pixels: np.ndarray) -> np.ndarray:
    x = pixels.astype(np.float32) / np.float32(255.0)
    mean = CIFAR10_MEAN.astype(np.float32).reshape(1, 3, 1, 1)
    std = CIFAR10_STD.astype(np.float32).reshape(1, 3, 1, 1)
    return (x - mean) / std


def denormalize_cifar10(images: np.ndarray) -> np.ndarray:
    mean = CIFAR10_MEAN.astype(np.float32).reshape(1, 3, 1, 1)
    std = CIFAR10_STD.astype(np.float32).reshape(1, 3, 1, 1)
    pixels = np.rint((images.astype(np.float32) * std + mean) * np.float32(255.0))
    return np.clip(pixels, 0, 255).astype(np.uint8)


def load_cifar10(path, files=CIFAR10_FILES) -> ImageDataset:
    """Load the five training batches followed by the test batch (60000 images)."""
    pixels, labels = [], []
    for name in files:
        p, l = read_cifar10_batch(Path(path) / name)
        pixels.append(p)
        labels.append(l)
    return ImageDataset(normalize_cifar10(np.concatenate(pixels)), np.concatenate(labels), 10)


def save_cifar10_batch(dataset: ImageDataset, path) -> None:
    """Write ``dataset`` in the CIFAR-10 binary record layout."""
    pixels = denormalize_cifar10(dataset.images).reshape(len(dataset), -1)
    records = np.concatenate([dataset.labels.astype(np.uint8)[:, None], pixels], axis=1)
    records.tofile(Path(path))


# -- augmentation ---------------------------------------------------------------

@dataclass
class AugmentConfig:
    horizontal_flip_prob: float = 0.5
    crop_padding: int = 4
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise ConfigurationError("horizontal_flip_prob must lie in [0, 1]")
        if self.crop_padding < 0:
            raise ConfigurationError("crop_padding must be >= 0")


def flip_horizontal(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1]


def pad_and_crop(images: np.ndarray, padding: int, offsets: np.ndarray) -> np.ndarray:
    """Zero-pad each image by ``padding`` and crop back at per-image (dy, dx) offsets."""
    n, _, h, w = images.shape
    canvas = np.pad(images, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.empty_like(images)
    for i, (dy, dx) in enumerate(offsets):
        out[i] = canvas[i, :, dy:dy + h, dx:dx + w]
    return out


def augment_batch(batch: np.ndarray, config: AugmentConfig, seed) -> np.ndarray:
    """Random horizontal flip and zero-padded random crop, per image.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if not config.enabled:
        return batch
    if batch.ndim != 4:
        raise ConfigurationError("augmentation needs (batch, C, H, W) images")
    rng = np.random.default_rng(seed)
    flips = rng.random(len(batch)) < config.horizontal_flip_prob
    offsets = rng.integers(0, 2 * config.crop_padding + 1, size=(len(batch), 2))
    out = batch.copy()
    out[flips] = flip_horizontal(out[flips])
    if config.crop_padding:
        out = pad_and_crop(out, config.crop_padding, offsets)
    return out


# -- synthetic data -------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Gaussian class-conditional data.

    Class means are random directions scaled to norm ``separation``; samples
    add unit-variance isotropic noise. ``separation=0`` makes labels
    independent of the inputs.
    """

    count: int = 1000
    classes: int = 10
    shape: tuple = (32,)
    separation: float = 3.0

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.count <= 0 or self.classes <= 1:
            raise ConfigurationError("synthetic data needs count > 0 and classes > 1")


def gen_synthetic(spec: SyntheticSpec, seed: int) -> ImageDataset:
    rng = np.random.default_rng(seed)
    dim = int(np.prod(spec.shape))
    directions = rng.standard_normal((spec.classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.separation * directions
    labels = rng.permutation(np.arange(spec.count) % spec.classes)
    x = means[labels] + rng.standard_normal((spec.count, dim))
    return ImageDataset(x.reshape((spec.count,) + spec.shape), labels, spec.classes)
