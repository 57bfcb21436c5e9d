"""Synthetic pool generation and the pixel-quantity accuracy model.

Pools are generated with a rank-power class imbalance: the prevalence of
class i is prevalence_scale * (i + 1)^(-imbalance), so higher indices
are rarer. Predicted presence bits are the ground truth flipped with a
configurable probability, and uncertainty features are drawn higher in
expectation for patches containing rare classes, which keeps the
uncertainty-ranking baseline meaningful.

The accuracy model scores a labelled set from its per-class pixel
counts h: each class contributes K_i * max(0, log10(h_i / h_min)), with
counts at or below the h_min floor contributing nothing.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .poolio import FLAG_ENTROPY, PoolHeader, PoolWriter, record_dtype

GENERATION_CHUNK = 65536
DEFAULT_H_MIN = 1e4
DEFAULT_K_RANGE = (0.0, 0.25)


@dataclass(frozen=True)
class SynthConfig:
    n_patches: int = 100_000
    n_classes: int = 16
    imbalance: float = 1.0           # prevalence ~ rank^-imbalance
    prevalence_scale: float = 0.8
    flip_prob: float = 0.1           # presence-bit noise of the predictions
    bald_noise: float = 0.1          # sigma of the uncertainty features, nats
    padding_frac: float = 0.0        # empty high-entropy patches
    cooccurrence: tuple = ()         # (i, j, p) triples: P(j present | i present) = p
    small_classes: tuple = ()        # classes drawn as small objects (few pixels)
    small_class_weight: float = 0.05
    include_entropy: bool = True
    patch_capacity: int = 4096
    seed: int = 0

    def validate(self) -> None:
        if self.n_patches < 1:
            raise ConfigError("n_patches must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.imbalance < 0:
            raise ConfigError("imbalance exponent must be >= 0")
        if not 0.0 < self.prevalence_scale <= 1.0:
            raise ConfigError("prevalence_scale must be in (0, 1]")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ConfigError("flip_prob must be in [0, 0.5)")
        if self.bald_noise < 0:
            raise ConfigError("bald_noise must be >= 0")
        if not 0.0 <= self.padding_frac < 1.0:
            raise ConfigError("padding_frac must be in [0, 1)")
        if self.patch_capacity < 2 * self.n_classes:
            raise ConfigError("patch_capacity must be at least 2x n_classes")
        for triple in self.cooccurrence:
            i, j, p = triple
            if not (0 <= i < self.n_classes and 0 <= j < self.n_classes and i != j):
                raise ConfigError(f"bad co-occurrence pair ({i}, {j})")
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"co-occurrence probability {p} out of [0, 1]")
        if not 0.0 < self.small_class_weight <= 1.0:
            raise ConfigError("small_class_weight must be in (0, 1]")
        for c in self.small_classes:
            if not 0 <= c < self.n_classes:
                raise ConfigError(f"small class index {c} out of range")


def prevalences(cfg: SynthConfig) -> np.ndarray:
    """Per-class probability that a patch contains the class."""
    ranks = np.arange(1, cfg.n_classes + 1, dtype=np.float64)
    return cfg.prevalence_scale * ranks ** (-cfg.imbalance)


@dataclass
class IouModel:
    """Per-class accuracy ~ K_i * log10(pixel count) above a hard floor."""

    k: np.ndarray                    # length-C scaling factors, >= 0
    h_min: float = DEFAULT_H_MIN
    saturation: float | None = None  # optional cap on the per-class log term

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if np.any(self.k < 0):
            raise ValidationError("class scaling factors must be >= 0")
        if self.h_min <= 0:
            raise ValidationError("h_min must be > 0")

    @property
    def n_classes(self) -> int:
        return len(self.k)

    def log_terms(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        with np.errstate(divide="ignore"):
            t = np.where(h > 0, np.log10(np.maximum(h, 1e-300)) - np.log10(self.h_min), 0.0)
        t = np.maximum(t, 0.0)
        if self.saturation is not None:
            t = np.minimum(t, self.saturation)
        return t

    def class_iou(self, target: int, h) -> float:
        h = np.asarray(h)
        if not 0 <= target < self.n_classes:
            raise ValidationError(f"target class {target} out of range")
        return float(self.k[target] * self.log_terms(h)[target])

    def mean_iou(self, h) -> float:
        return float(np.mean(self.k * self.log_terms(h)))

    @classmethod
    def from_seed(cls, seed, n_classes: int, h_min: float = DEFAULT_H_MIN) -> "IouModel":
        rng = np.random.default_rng(seed)
        lo, hi = DEFAULT_K_RANGE
        return cls(k=rng.uniform(lo, hi, n_classes), h_min=h_min)

    def to_json(self) -> str:
        return json.dumps({"k": self.k.tolist(), "h_min": self.h_min,
                           "saturation": self.saturation}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "IouModel":
        obj = json.loads(text)
        return cls(k=np.array(obj["k"]), h_min=obj["h_min"], saturation=obj.get("saturation"))


def iou_sidecar_path(pool_path) -> str:
    return f"{pool_path}.iou.json"


def simulated_mean_iou(h, model: IouModel) -> float:
    """Mean over classes of the model's per-class accuracy terms."""
    h = np.asarray(h)
    if h.shape != (model.n_classes,):
        raise ValidationError(f"histogram length {h.shape} does not match model C={model.n_classes}")
    return model.mean_iou(h)


def delta_iou_reward(h_before, h_after, target: int, model: IouModel) -> float:
    """Change in the target class accuracy term between two histograms.

    In the batched selection setting this one number is assigned to
    every patch of the event.
    """
    h_before = np.asarray(h_before, dtype=np.float64)
    h_after = np.asarray(h_after, dtype=np.float64)
    if np.any(h_after < h_before):
        raise ValidationError("histogram must be non-decreasing per class")
    return model.class_iou(target, h_after) - model.class_iou(target, h_before)


def thought_experiment(model: IouModel, distribution, steps: int, pixels_per_step: float = 5e5):
    """Expected accuracy curves for class-proportional vs class-uniform sampling.

    Requires equal per-class scaling factors. Returns (uniform, random)
    arrays of the simulated mean accuracy after each step, computed in
    expectation (no sampling noise).
    """
    d = np.asarray(distribution, dtype=np.float64)
    if d.ndim != 1 or len(d) != model.n_classes:
        raise ValidationError("distribution length must match the model's class count")
    if np.any(d < 0) or d.sum() <= 0:
        raise ValidationError("distribution must be non-negative and non-trivial")
    if not np.allclose(model.k, model.k[0]):
        raise ValidationError("the thought experiment assumes equal class scaling factors")
    d = d / d.sum()
    c = model.n_classes
    uniform = np.empty(steps)
    random = np.empty(steps)
    for s in range(steps):
        total = (s + 1) * pixels_per_step
        uniform[s] = model.mean_iou(np.full(c, total / c))
        random[s] = model.mean_iou(total * d)
    return uniform, random


def _chunk_rows(cfg: SynthConfig, prev: np.ndarray, rarity_scale: np.ndarray,
                dtype: np.dtype, start_id: int, n: int, rng: np.random.Generator) -> np.ndarray:
    c = cfg.n_classes
    present = rng.random((n, c)) < prev

    # Conditional overrides, single pass against the pre-override draw.
    if cfg.cooccurrence:
        base = present.copy()
        for i, j, p in cfg.cooccurrence:
            with_i = base[:, int(i)]
            present[with_i, int(j)] = rng.random(int(with_i.sum())) < p

    padding = rng.random(n) < cfg.padding_frac
    present[padding] = False

    # Pixel counts: present classes split a random fraction of the patch;
    # floor(share * budget) + 1 keeps every present class at >= 1 pixel
    # while the per-patch total stays under capacity. Small-object classes
    # get a shrunken weight so their patches are mostly other classes.
    weights = rng.uniform(0.2, 1.0, (n, c))
    if cfg.small_classes:
        weights[:, list(cfg.small_classes)] *= cfg.small_class_weight
    weights = weights * present
    wsum = weights.sum(axis=1)
    n_present = present.sum(axis=1)
    budget = rng.uniform(0.5, 0.95, n) * cfg.patch_capacity - n_present
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(present, weights / np.where(wsum > 0, wsum, 1.0)[:, None], 0.0)
    counts = np.where(present, np.floor(share * np.maximum(budget, 0.0)[:, None]) + 1, 0.0)
    counts = counts.astype(np.uint32)

    flips = rng.random((n, c)) < cfg.flip_prob
    predicted = present ^ flips

    # Uncertainty features center on the rarity of the rarest class present.
    ln_c = np.log(c)
    rarity = (present * rarity_scale).max(axis=1)
    center = 0.1 + 0.55 * rarity * ln_c / np.log(16)
    center[padding] = 0.05
    triple = np.sort(center[:, None] + cfg.bald_noise * rng.standard_normal((n, 3)), axis=1)
    triple = np.clip(triple, 0.0, ln_c)

    entropy = np.clip(triple[:, 1] + np.abs(rng.normal(0.0, cfg.bald_noise, n)) + 0.05,
                      0.0, ln_c)
    entropy[padding] = np.clip(0.9 * ln_c + rng.normal(0.0, cfg.bald_noise, int(padding.sum())),
                               0.5 * ln_c, ln_c)

    rows = np.zeros(n, dtype=dtype)
    rows["id"] = np.arange(start_id, start_id + n, dtype=np.uint64)
    rows["bald"][:, 0] = triple[:, 2]
    rows["bald"][:, 1] = triple[:, 0]
    rows["bald"][:, 2] = triple[:, 1]
    if cfg.include_entropy:
        rows["entropy"] = entropy
    rows["bits"] = np.packbits(predicted.astype(np.uint8), axis=1, bitorder="little")
    rows["gt"] = counts
    return rows


def generate_pool(cfg: SynthConfig, out_path) -> tuple[PoolHeader, IouModel]:
    """Write a synthetic pool file plus its accuracy-model sidecar.

    Generation is a seeded chunked stream (fixed chunk size, one derived
    seed per chunk), so identical configs give byte-identical files.
    """
    cfg.validate()
    prev = prevalences(cfg)
    rar = -np.log(prev)
    rarity_scale = rar / max(float(rar.max()), 1e-12)
    flags = FLAG_ENTROPY if cfg.include_entropy else 0
    header = PoolHeader(n_patches=cfg.n_patches, n_classes=cfg.n_classes,
                        patch_capacity=cfg.patch_capacity, flags=flags)
    root = np.random.SeedSequence(cfg.seed)
    iou_ss, chunk_root = root.spawn(2)
    model = IouModel.from_seed(iou_ss, cfg.n_classes)

    n_chunks = (cfg.n_patches + GENERATION_CHUNK - 1) // GENERATION_CHUNK
    chunk_seeds = chunk_root.spawn(n_chunks)
    dtype = record_dtype(cfg.n_classes, cfg.include_entropy)
    with open(out_path, "wb") as fh:
        writer = PoolWriter(fh, header)
        for ci in range(n_chunks):
            start = ci * GENERATION_CHUNK
            n = min(GENERATION_CHUNK, cfg.n_patches - start)
            rng = np.random.default_rng(chunk_seeds[ci])
            writer.write_rows(_chunk_rows(cfg, prev, rarity_scale, dtype, start, n, rng))
        writer.close()
    with open(iou_sidecar_path(out_path), "w") as fh:
        fh.write(model.to_json())
        fh.write("\n")
    return header, model


def load_iou_model(pool_path) -> IouModel | None:
    """Read the accuracy-model sidecar next to a pool file, if present."""
    path = iou_sidecar_path(pool_path)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return IouModel.from_json(fh.read())
