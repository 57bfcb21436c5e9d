import os

import numpy as np
import pytest
from PIL import Image

N_CLASSES = 8


def _blobby_image(rng, w, h):
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros((h, w, 3), dtype=np.float64)
    for _ in range(6):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(min(w, h) / 8, min(w, h) / 3)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        img[mask] = rng.uniform(0, 1, 3)
    img += rng.normal(0, 0.05, img.shape)
    return (np.clip(img, 0, 1) * 255).astype(np.uint8)


def _region_mask(rng, w, h):
    """Rectangular class regions over a background class."""
    mask = np.zeros((h, w), dtype=np.uint8)
    for _ in range(10):
        cls = int(rng.integers(1, N_CLASSES))
        x0, y0 = int(rng.integers(0, w // 2)), int(rng.integers(0, h // 2))
        x1 = x0 + int(rng.integers(w // 8, w // 2))
        y1 = y0 + int(rng.integers(h // 8, h // 2))
        mask[y0:min(y1, h), x0:min(x1, w)] = cls
    return mask


def make_dataset(root, n_images, seed=0, sizes=None):
    """Write paired image/mask PNG fixtures and return the two dirs."""
    rng = np.random.default_rng(seed)
    img_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    os.makedirs(img_dir)
    os.makedirs(mask_dir)
    for i in range(n_images):
        w, h = sizes[i] if sizes else (512, 512)
        Image.fromarray(_blobby_image(rng, w, h)).save(
            os.path.join(img_dir, f"img_{i:03d}.png"))
        Image.fromarray(_region_mask(rng, w, h)).save(
            os.path.join(mask_dir, f"img_{i:03d}.png"))
    return img_dir, mask_dir


@pytest.fixture(scope="session")
def ten_image_dataset(tmp_path_factory):
    """Ten paired 512x512 fixtures, one of them portrait (padded after resize)."""
    root = str(tmp_path_factory.mktemp("dataset"))
    sizes = [(512, 512)] * 9 + [(384, 512)]
    return make_dataset(root, 10, seed=42, sizes=sizes)


@pytest.fixture(scope="session")
def ten_image_pool(ten_image_dataset, tmp_path_factory):
    """One shared extraction over the ten-image dataset."""
    from misical_extractor.extract import ExtractionJob, extract

    img_dir, mask_dir = ten_image_dataset
    out = str(tmp_path_factory.mktemp("pool") / "ten.msal")
    job = ExtractionJob(image_dir=img_dir, mask_dir=mask_dir, out_path=out,
                        n_classes=N_CLASSES, mc_passes=2, seed=1)
    n = extract(job)
    return out, n


@pytest.fixture(scope="session")
def two_image_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("dataset2"))
    return make_dataset(root, 2, seed=7)
