"""Synthetic desk-scale datasets and deterministic train/validation splits."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass
class Dataset:
    mode: str
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    @property
    def in_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def split(self, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """(train indices, validation indices), disjoint and fixed by ``seed``."""
        if not 0.0 < val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        perm = np.random.default_rng(np.random.SeedSequence([seed, 7])).permutation(len(self))
        n_val = max(1, int(round(val_fraction * len(self))))
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])

    def digest(self, train_idx: np.ndarray, val_idx: np.ndarray) -> bytes:
        """SHA-256 over the samples and the split, as stored in logits files."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(train_idx, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(val_idx, dtype="<i8").tobytes())
        return h.digest()


def make_synthetic(kind: str, n_samples: int, n_classes: int, dims: int = 2,
                   image_side: Optional[int] = None, noise: float = 0.1, seed: int = 0,
                   channels: int = 1) -> Dataset:
    """Gaussian blobs or interleaved spiral arms.

    With ``image_side`` set, blobs become images: each class owns a random
    template of shape (channels, side, side) and samples add pixel noise.
    Spirals exist only in vector form; extra ``dims`` beyond two carry noise.
    """
    if n_samples < 1 or n_classes < 2 or dims < 1 or noise < 0:
        raise ValueError("n_samples, n_classes and dims must be positive, noise non-negative")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % n_classes
    rng.shuffle(labels)
    if kind == "blobs":
        if image_side is not None:
            shape = (channels, image_side, image_side)
            templates = rng.normal(size=(n_classes,) + shape)
            x = templates[labels] + noise * rng.normal(size=(n_samples,) + shape)
            return Dataset("image", x, labels, n_classes)
        centers = rng.normal(scale=3.0, size=(n_classes, dims))
        x = centers[labels] + noise * rng.normal(size=(n_samples, dims))
        return Dataset("vector", x, labels, n_classes)
    if kind == "spirals":
        if image_side is not None:
            raise ValueError("spirals are vector-only")
        if dims < 2:
            raise ValueError("spirals need at least two dims")
        t = np.sqrt(rng.random(n_samples))
        angle = 3.0 * np.pi * t + 2.0 * np.pi * labels / n_classes
        x = np.zeros((n_samples, dims))
        x[:, 0] = t * np.cos(angle)
        x[:, 1] = t * np.sin(angle)
        x += noise * rng.normal(size=x.shape)
        return Dataset("vector", x, labels, n_classes)
    raise ValueError(f"unknown dataset kind {kind!r}")
