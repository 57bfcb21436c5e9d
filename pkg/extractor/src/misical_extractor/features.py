"""Patch feature math on stochastic-pass probability volumes.

Independent implementation of the disagreement statistics used by the
selection engine, kept free of any engine imports so the two codebases
can be cross-checked on shared fixtures. All entropies in nats.

For a (T, K, C) volume the per-pixel disagreement score is computed in
one expression: with m = mean over passes,

    score_k = -sum_c m_kc * ln(m_kc) + (1/T) * sum_{t,c} p_tkc * ln(p_tkc)

which is the mutual information between the prediction and the pass
index. Patch features are the max/min/mean pooling of the K scores plus
a per-class presence bit from the argmax of the mean prediction.
"""
from __future__ import annotations

import numpy as np


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def pixel_disagreement(volume: np.ndarray) -> np.ndarray:
    """Per-pixel mutual-information scores for a (T, K, C) volume."""
    vol = np.asarray(volume, dtype=np.float64)
    t = vol.shape[0]
    mean_pred = vol.mean(axis=0)                      # (K, C)
    score = -_xlogx(mean_pred).sum(axis=1) + _xlogx(vol).sum(axis=(0, 2)) / t
    return np.maximum(score, 0.0)


def patch_summary(volume: np.ndarray) -> tuple[float, float, float]:
    """(max, min, mean) pooling of the per-pixel disagreement scores."""
    scores = pixel_disagreement(volume)
    return float(scores.max()), float(scores.min()), float(scores.mean())


def patch_presence(volume: np.ndarray) -> np.ndarray:
    """Presence bit per class from the mean prediction's argmax labels."""
    vol = np.asarray(volume, dtype=np.float64)
    c = vol.shape[2]
    labels = vol.mean(axis=0).argmax(axis=1)
    bits = np.zeros(c, dtype=np.uint8)
    bits[np.unique(labels)] = 1
    return bits


def patch_mean_entropy(volume: np.ndarray) -> float:
    """Mean over pixels of the predictive entropy of the mean prediction."""
    vol = np.asarray(volume, dtype=np.float64)
    mean_pred = vol.mean(axis=0)
    return float(-_xlogx(mean_pred).sum(axis=1).mean())
