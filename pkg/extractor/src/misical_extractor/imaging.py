"""Image and mask loading: resize to a padded square, slice into patches.

Images scale so their largest side hits the resize target, the rest is
black padding; masks resize with nearest-neighbour and padding takes
the ignore label, so padded pixels never count as ground truth.
"""
from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import PatchGridError, UnpairedFilesError

IGNORE_LABEL = 255
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def pair_files(image_dir: str, mask_dir: str) -> list[tuple[str, str]]:
    """Match images and masks one-to-one by filename stem, sorted."""
    def stems(d):
        out = {}
        for name in os.listdir(d):
            stem, ext = os.path.splitext(name)
            if ext.lower() in (".png", ".jpg", ".jpeg", ".bmp"):
                out[stem] = os.path.join(d, name)
        return out

    images, masks = stems(image_dir), stems(mask_dir)
    missing = sorted(set(images) ^ set(masks))
    if missing:
        raise UnpairedFilesError(
            f"images and masks do not pair by filename; unmatched stems: {missing[:5]}")
    if not images:
        raise UnpairedFilesError(f"no images found in {image_dir}")
    return [(images[s], masks[s]) for s in sorted(images)]


def _scaled_size(w: int, h: int, target: int) -> tuple[int, int]:
    if w >= h:
        return target, max(1, round(h * target / w))
    return max(1, round(w * target / h)), target


def load_image(path: str, target: int) -> np.ndarray:
    """(3, target, target) float32, normalized, black-padded square."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        nw, nh = _scaled_size(w, h, target)
        img = img.resize((nw, nh), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    canvas = np.zeros((target, target, 3), dtype=np.float32)
    canvas[:nh, :nw] = arr
    canvas = (canvas - MEAN) / STD
    return np.ascontiguousarray(canvas.transpose(2, 0, 1))


def load_mask(path: str, target: int) -> np.ndarray:
    """(target, target) uint8 class labels; padding gets the ignore label."""
    with Image.open(path) as img:
        if img.mode not in ("L", "P"):
            img = img.convert("L")
        w, h = img.size
        nw, nh = _scaled_size(w, h, target)
        img = img.resize((nw, nh), Image.NEAREST)
        arr = np.asarray(img, dtype=np.uint8)
    canvas = np.full((target, target), IGNORE_LABEL, dtype=np.uint8)
    canvas[:nh, :nw] = arr
    return canvas


def patch_grid(target: int, patch: int) -> int:
    if patch < 1 or target % patch != 0:
        raise PatchGridError(f"patch size {patch} does not tile a {target}px square")
    return target // patch


def patch_count_per_class(mask_patch: np.ndarray, n_classes: int) -> np.ndarray:
    """Pixels per class inside one mask patch, ignore label excluded."""
    valid = mask_patch[mask_patch != IGNORE_LABEL]
    return np.bincount(valid, minlength=n_classes)[:n_classes].astype(np.uint32)
