"""Mixup virtual examples, MixAugment batch triples and horizontal flips."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError, DomainError
from .numerics import Rng, as_tensor, sample_beta

SIMPLEX_TOL = 1e-9


def _check_label_rows(labels: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if np.any(labels < 0) or np.any(np.abs(labels.sum(axis=-1) - 1.0) > tol):
        raise ArgumentError("labels must be non-negative and sum to 1")


def _check_pixels(pixels: np.ndarray) -> None:
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ArgumentError("pixels must lie in [0, 1]")


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray  # H x W x C
    label: np.ndarray  # K

    def __post_init__(self):
        pixels = as_tensor(self.pixels, "pixels")
        label = as_tensor(self.label, "label")
        if pixels.ndim != 3:
            raise DimensionError(f"pixels must be H x W x C, got {pixels.shape}")
        if label.ndim != 1:
            raise DimensionError(f"label must be a vector, got {label.shape}")
        _check_pixels(pixels)
        _check_label_rows(label)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "label", label)


@dataclass(frozen=True)
class Batch:
    images: np.ndarray  # B x H x W x C
    labels: np.ndarray  # B x K

    def __post_init__(self):
        images = as_tensor(self.images, "images")
        labels = as_tensor(self.labels, "labels")
        if images.ndim != 4 or labels.ndim != 2 or images.shape[0] != labels.shape[0]:
            raise DimensionError(f"batch shapes disagree: images {images.shape}, labels {labels.shape}")
        _check_pixels(images)
        _check_label_rows(labels)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.images.shape[0]

    def take(self, index) -> "Batch":
        return Batch(self.images[index], self.labels[index])

    @classmethod
    def stack(cls, items: list[LabeledImage]) -> "Batch":
        if not items:
            raise ArgumentError("cannot stack an empty list of images")
        return cls(np.stack([it.pixels for it in items]), np.stack([it.label for it in items]))

    def unstack(self) -> list[LabeledImage]:
        return [LabeledImage(x, y) for x, y in zip(self.images, self.labels)]


@dataclass(frozen=True)
class MixBatch:
    real_i: Batch
    real_j: Batch
    virtual: Batch
    lam: float
    perm: np.ndarray  # real_j == real_i.take(perm)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def mix(lam: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Convex combination ``lam * a + (1 - lam) * b``; exact at lam in {0, 1}."""
    if lam == 1.0:
        return a.copy()
    if lam == 0.0:
        return b.copy()
    return lam * a + (1.0 - lam) * b


def mixup_pair(a: LabeledImage, b: LabeledImage, lam: float) -> LabeledImage:
    lam = _check_lambda(lam)
    if a.pixels.shape != b.pixels.shape or a.label.shape != b.label.shape:
        raise DimensionError(
            f"mixup_pair: shapes differ ({a.pixels.shape}, {a.label.shape}) vs ({b.pixels.shape}, {b.label.shape})"
        )
    pixels = np.clip(mix(lam, a.pixels, b.pixels), 0.0, 1.0)
    return LabeledImage(pixels, mix(lam, a.label, b.label))


def mix_batches(real_i: Batch, perm: np.ndarray, lam: float) -> MixBatch:
    """Build the (real_i, real_j, virtual) triple for a given partner permutation and weight."""
    lam = _check_lambda(lam)
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(len(real_i))):
        raise ArgumentError("perm is not a permutation of the batch indices")
    real_j = real_i.take(perm)
    # clip only absorbs 1-ulp rounding past the [0, 1] bounds
    virtual = Batch(
        np.clip(mix(lam, real_i.images, real_j.images), 0.0, 1.0),
        mix(lam, real_i.labels, real_j.labels),
    )
    return MixBatch(real_i, real_j, virtual, lam, perm)


def make_mixup_batch(batch: Batch, alpha: float, rng: Rng) -> MixBatch:
    """One Beta(alpha, alpha) weight per batch; partners are a shuffled copy of the batch."""
    if len(batch) < 2:
        raise ArgumentError(f"mixup needs at least 2 samples per batch, got {len(batch)}")
    perm = rng.permutation(len(batch))
    lam = sample_beta(alpha, rng)
    return mix_batches(batch, perm, lam)


def hflip(img: LabeledImage) -> LabeledImage:
    return LabeledImage(img.pixels[:, ::-1, :], img.label)


def random_hflip_batch(batch: Batch, p: float, rng: Rng) -> Batch:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"flip probability must lie in [0, 1], got {p}")
    flip = rng.uniform(len(batch)) < p
    if not flip.any():
        return batch
    images = batch.images.copy()
    images[flip] = images[flip][:, :, ::-1, :]
    return Batch(images, batch.labels)
