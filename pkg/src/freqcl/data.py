"""Dataset ingestion: the CIFAR-10 binary layout and a seeded synthetic
generator whose classes differ both in smooth global structure and in
fine stripe texture."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError

RECORD_BYTES = 3073
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
SYNTHETIC_MEAN = (0.5, 0.5, 0.5)
SYNTHETIC_STD = (0.25, 0.25, 0.25)


class DataSource(str, enum.Enum):
    SYNTHETIC = "synthetic"
    CIFAR10 = "cifar10"


@dataclass(frozen=True)
class DatasetSpec:
    source: DataSource = DataSource.SYNTHETIC
    path: str = ""
    classes: int = 4
    samples_per_class: int = 500
    test_samples_per_class: int = 100
    image_size: int = 32
    seed: int = 0
    mean: tuple | None = None
    std: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "source", DataSource(self.source))
        if self.image_size % 2:
            raise ConfigError("must be even", key="dataset.image_size")
        if self.source is DataSource.SYNTHETIC and self.classes < 2:
            raise ConfigError("must be >= 2", key="dataset.classes")
        if self.source is DataSource.CIFAR10 and not self.path:
            raise ConfigError("required for the cifar10 source", key="dataset.path")

    @property
    def num_classes(self):
        return 10 if self.source is DataSource.CIFAR10 else self.classes

    def normalization(self):
        if self.source is DataSource.CIFAR10:
            default_mean, default_std = CIFAR10_MEAN, CIFAR10_STD
        else:
            default_mean, default_std = SYNTHETIC_MEAN, SYNTHETIC_STD
        return tuple(self.mean or default_mean), tuple(self.std or default_std)


def read_cifar10_binary(path):
    """Read one CIFAR-10 binary batch: ``(images[N,3,32,32] in [0,1], labels)``."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES:
        offset = raw.size - raw.size % RECORD_BYTES
        raise DataFormatError(
            f"{path}: truncated record at byte offset {offset} "
            f"({raw.size % RECORD_BYTES} of {RECORD_BYTES} bytes present)"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(f"{path}: label byte {labels[bad[0]]} > 9 at byte offset {bad[0] * RECORD_BYTES}")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def write_cifar10_binary(path, images, labels):
    """Write images in [0,1] (quantised to 8 bits) in the CIFAR-10 layout."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape[1:] != (3, 32, 32):
        raise DataFormatError(f"CIFAR-10 layout needs 3x32x32 images, got {images.shape[1:]}")
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataFormatError("CIFAR-10 labels must lie in 0..9")
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8).reshape(len(images), -1)
    records = np.concatenate([labels.astype(np.uint8)[:, None], pixels], axis=1)
    records.tofile(path)


def load_cifar10(root):
    """Train and test arrays from the canonical ``data_batch_{1..5}.bin`` and
    ``test_batch.bin`` files under ``root``."""
    train_files = sorted(f for f in os.listdir(root) if f.startswith("data_batch_") and f.endswith(".bin"))
    test_file = os.path.join(root, "test_batch.bin")
    if not train_files or not os.path.exists(test_file):
        raise DataFormatError(f"{root}: expected data_batch_*.bin and test_batch.bin")
    parts = [read_cifar10_binary(os.path.join(root, f)) for f in train_files]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    test_x, test_y = read_cifar10_binary(test_file)
    return train_x, train_y, test_x, test_y


def _class_prototypes(n_classes, rng):
    protos = []
    offset = rng.uniform(0, np.pi)
    for c in range(n_classes):
        protos.append({
            "angle": offset + np.pi * c / n_classes,
            "color": rng.uniform(-1.0, 1.0, size=3),
            "freq": rng.uniform(0.22, 0.4),  # cycles per pixel: well above the half-band
            "stripe_angle": rng.uniform(0, np.pi),
            "stripe_color": rng.uniform(-1.0, 1.0, size=3),
        })
    return protos


def synthesize_dataset(classes, samples_per_class, image_size=32, seed=0, noise=0.25, split="train",
                       low_amplitude=0.12, high_amplitude=0.1, jitter=0.35):
    """Seeded images in [0,1]: per-class smooth gradient (orientation and
    colour) plus per-class stripe texture (frequency, orientation, colour)
    with a random phase, amplitude and orientation jitter and pixel noise.

    Class prototypes depend on ``seed`` only; ``split`` selects an
    independent sample stream, so train and test share their classes.
    Returns ``(images[N,3,S,S], labels)`` ordered by class.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng([seed, {"train": 1, "test": 2}[split]])
    protos = _class_prototypes(classes, np.random.default_rng([seed, 0]))
    coords = (np.arange(image_size) - (image_size - 1) / 2) / (image_size / 2)
    v, u = np.meshgrid(coords, coords, indexing="ij")
    pix = np.arange(image_size)
    pv, pu = np.meshgrid(pix, pix, indexing="ij")
    images, labels = [], []
    for c, p in enumerate(protos):
        for _ in range(samples_per_class):
            angle = p["angle"] + jitter * rng.standard_normal()
            stripe_angle = p["stripe_angle"] + jitter * rng.standard_normal()
            grad = np.cos(angle) * u + np.sin(angle) * v
            proj = np.cos(stripe_angle) * pu + np.sin(stripe_angle) * pv
            amp_low = rng.uniform(0.6, 1.0)
            amp_high = rng.uniform(0.6, 1.0)
            phase = rng.uniform(0, 2 * np.pi)
            stripes = np.sin(2 * np.pi * p["freq"] * proj + phase)
            img = (
                0.5
                + low_amplitude * amp_low * p["color"][:, None, None] * grad
                + high_amplitude * amp_high * p["stripe_color"][:, None, None] * stripes
                + noise * rng.standard_normal((3, image_size, image_size))
            )
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(c)
    return np.asarray(images, dtype=np.float32), np.asarray(labels, dtype=np.int64)


def normalize(images, mean, std):
    mean = np.asarray(mean, dtype=images.dtype).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=images.dtype).reshape(1, -1, 1, 1)
    return (images - mean) / std


def load_dataset(spec):
    """``(train_x, train_y, test_x, test_y)`` normalised per channel."""
    if spec.source is DataSource.CIFAR10:
        train_x, train_y, test_x, test_y = load_cifar10(spec.path)
    else:
        train_x, train_y = synthesize_dataset(spec.classes, spec.samples_per_class, spec.image_size, spec.seed)
        test_x, test_y = synthesize_dataset(
            spec.classes, spec.test_samples_per_class, spec.image_size, spec.seed, split="test"
        )
    mean, std = spec.normalization()
    return normalize(train_x, mean, std), train_y, normalize(test_x, mean, std), test_y
