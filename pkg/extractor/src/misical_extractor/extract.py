"""Extraction pipeline: images + masks -> pool file.

Inference always runs on the full padded image; the probability volume
is sliced into patches only afterwards, so every patch's features see
the surrounding context. Patch ids follow (image index * patches per
image + row-major patch index), which keeps file order strictly
increasing without any buffering.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import features
from .errors import ExtractorError
from .imaging import (
    load_image,
    load_mask,
    pair_files,
    patch_count_per_class,
    patch_grid,
)
from .model import build_model, mc_probabilities
from .poolwriter import PoolFileWriter


@dataclass
class ExtractionJob:
    image_dir: str
    mask_dir: str
    out_path: str
    n_classes: int
    model: str = "tiny"
    mc_passes: int = 15
    patch_size: int = 64
    resize_to: int = 512
    seed: int = 0
    with_entropy: bool = True

    def validate(self) -> None:
        if self.mc_passes < 2:
            raise ExtractorError("need at least 2 stochastic passes for a "
                                 "nonzero disagreement signal")
        patch_grid(self.resize_to, self.patch_size)
        if self.n_classes < 2:
            raise ExtractorError("n_classes must be >= 2")

    @property
    def patches_per_image(self) -> int:
        side = patch_grid(self.resize_to, self.patch_size)
        return side * side


def _patch_volume(probs: torch.Tensor, row: int, col: int, size: int) -> np.ndarray:
    """(T, K, C) numpy view of one patch from a (T, C, H, W) volume."""
    block = probs[:, :, row * size:(row + 1) * size, col * size:(col + 1) * size]
    t, c = block.shape[0], block.shape[1]
    return block.reshape(t, c, size * size).permute(0, 2, 1).numpy()


def iter_patch_records(job: ExtractionJob, pairs=None):
    """Yield (patch_id, features...) tuples in id order, one image at a time."""
    job.validate()
    pairs = pairs if pairs is not None else pair_files(job.image_dir, job.mask_dir)
    model = build_model(job.model, job.n_classes, seed=job.seed)
    side = patch_grid(job.resize_to, job.patch_size)
    per_image = side * side
    for img_idx, (img_path, mask_path) in enumerate(pairs):
        image = torch.from_numpy(load_image(img_path, job.resize_to))
        mask = load_mask(mask_path, job.resize_to)
        probs = mc_probabilities(model, image, job.mc_passes,
                                 seed=job.seed * 100_003 + img_idx)
        for row in range(side):
            for col in range(side):
                volume = _patch_volume(probs, row, col, job.patch_size)
                bmax, bmin, bmean = features.patch_summary(volume)
                bits = features.patch_presence(volume)
                entropy = features.patch_mean_entropy(volume) if job.with_entropy else None
                mask_patch = mask[row * job.patch_size:(row + 1) * job.patch_size,
                                  col * job.patch_size:(col + 1) * job.patch_size]
                counts = patch_count_per_class(mask_patch, job.n_classes)
                patch_id = img_idx * per_image + row * side + col
                yield patch_id, bmax, bmin, bmean, bits, counts, entropy


def extract(job: ExtractionJob) -> int:
    """Run the pipeline and stream records into the pool file.

    Returns the number of records written.
    """
    job.validate()
    pairs = pair_files(job.image_dir, job.mask_dir)
    n_records = len(pairs) * job.patches_per_image
    capacity = job.patch_size * job.patch_size
    with open(job.out_path, "wb") as fh:
        writer = PoolFileWriter(fh, n_records, job.n_classes, capacity,
                                with_entropy=job.with_entropy)
        for pid, bmax, bmin, bmean, bits, counts, entropy in iter_patch_records(job, pairs):
            writer.add(pid, bmax, bmin, bmean, bits, counts, entropy)
        writer.close()
    return n_records


def dump_probmaps(job: ExtractionJob, sample_ids, fixture_path) -> None:
    """Write raw (T, K, C) probability volumes for selected patch ids.

    The npz holds one `volume_<id>` array per sample plus an `ids`
    vector; the selection engine's test suite consumes the same layout
    for cross-implementation checks.
    """
    job.validate()
    wanted = sorted(set(int(i) for i in sample_ids))
    pairs = pair_files(job.image_dir, job.mask_dir)
    model = build_model(job.model, job.n_classes, seed=job.seed)
    side = patch_grid(job.resize_to, job.patch_size)
    per_image = side * side
    out_of_range = [pid for pid in wanted
                    if not 0 <= pid < len(pairs) * per_image]
    if out_of_range:
        raise ExtractorError(f"sample ids out of range: {out_of_range}")
    arrays = {}
    for img_idx, (img_path, _) in enumerate(pairs):
        in_image = [pid for pid in wanted
                    if img_idx * per_image <= pid < (img_idx + 1) * per_image]
        if not in_image:
            continue
        image = torch.from_numpy(load_image(img_path, job.resize_to))
        probs = mc_probabilities(model, image, job.mc_passes,
                                 seed=job.seed * 100_003 + img_idx)
        for pid in in_image:
            row, col = divmod(pid - img_idx * per_image, side)
            arrays[f"volume_{pid}"] = _patch_volume(
                probs, row, col, job.patch_size).astype(np.float32)
    arrays["ids"] = np.array(wanted, dtype=np.uint64)
    np.savez_compressed(fixture_path, **arrays)
