"""Patch-level feature math on per-pixel class-probability volumes.

All entropies are in nats. A probability volume has shape (T, K, C):
T stochastic forward passes, K pixels, C classes. Every (t, k) slice is
a distribution over the C classes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

PROB_SUM_TOL = 1e-5


def _check_rows_normalized(rows: np.ndarray) -> None:
    if np.any(rows < 0):
        raise ValidationError("probabilities must be non-negative")
    sums = rows.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
        worst = float(np.abs(sums - 1.0).max())
        raise ValidationError(f"probability rows must sum to 1 (off by {worst:.3g})")


def validate_prob_map(samples: np.ndarray) -> np.ndarray:
    """Validate a (T, K, C) probability volume and return it as float64."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"probability volume must be (T, K, C), got shape {arr.shape}")
    t, k, c = arr.shape
    if t < 1 or k < 1 or c < 2:
        raise ValidationError(f"need T >= 1, K >= 1, C >= 2, got ({t}, {k}, {c})")
    _check_rows_normalized(arr)
    return arr


@dataclass(frozen=True)
class BaldSummary:
    """Max/min/mean pooling of per-pixel BALD values over one patch."""

    max: float
    min: float
    mean: float

    def as_array(self) -> np.ndarray:
        return np.array([self.max, self.min, self.mean], dtype=np.float64)


@dataclass(frozen=True)
class ClassPresence:
    """Per-class presence bits derived from the predicted segmentation."""

    bits: np.ndarray  # length-C uint8 vector of {0, 1}

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
            raise ValidationError("presence bits must be a 1-D {0,1} vector")
        object.__setattr__(self, "bits", bits)


def _entropy_of_rows(rows: np.ndarray) -> np.ndarray:
    """Entropy of each distribution along the last axis, 0*ln(0) = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rows > 0.0, rows * np.log(rows), 0.0)
    return -terms.sum(axis=-1)


def shannon_entropy(p) -> float:
    """Shannon entropy of one probability vector, in nats.

    Deterministic distributions give exactly 0; the result never exceeds
    ln(C).
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError("expected a 1-D probability vector")
    _check_rows_normalized(arr)
    return float(_entropy_of_rows(arr))


def mc_bald_pixel(samples) -> float:
    """Mutual information between prediction and posterior for one pixel.

    `samples` is a (T, C) matrix of class probabilities from T stochastic
    forward passes. Computed as the entropy of the mean prediction minus
    the mean entropy of the individual predictions, clamped at 0 against
    floating-point underflow.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValidationError("expected a (T, C) matrix with T >= 1")
    _check_rows_normalized(arr)
    mean_entropy = float(_entropy_of_rows(arr).mean())
    entropy_of_mean = float(_entropy_of_rows(arr.mean(axis=0)))
    return max(0.0, entropy_of_mean - mean_entropy)


def pixel_bald_values(samples: np.ndarray) -> np.ndarray:
    """Vectorized per-pixel BALD over a validated (T, K, C) volume."""
    arr = validate_prob_map(samples)
    mean_entropy = _entropy_of_rows(arr).mean(axis=0)        # (K,)
    entropy_of_mean = _entropy_of_rows(arr.mean(axis=0))     # (K,)
    return np.maximum(0.0, entropy_of_mean - mean_entropy)


def bald_summary(samples) -> BaldSummary:
    """Pool per-pixel BALD values of one patch to (max, min, mean)."""
    values = pixel_bald_values(samples)
    return BaldSummary(max=float(values.max()), min=float(values.min()),
                       mean=float(values.mean()))


def class_presence(samples) -> ClassPresence:
    """Presence bit per class from the mean-over-passes segmentation.

    A class is present when at least one pixel's argmax over the
    mean-over-T probabilities is that class. Argmax ties break toward
    the lowest class index.
    """
    arr = validate_prob_map(samples)
    c = arr.shape[2]
    labels = arr.mean(axis=0).argmax(axis=1)  # np.argmax takes the first maximum
    bits = np.zeros(c, dtype=np.uint8)
    bits[np.unique(labels)] = 1
    return ClassPresence(bits=bits)


def concat_features(b: BaldSummary, c: ClassPresence) -> np.ndarray:
    """Action feature vector: (max, min, mean) followed by presence bits."""
    return np.concatenate([b.as_array(), c.bits.astype(np.float64)])
