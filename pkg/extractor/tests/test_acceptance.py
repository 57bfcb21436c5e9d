"""Sidecar release criteria, one verdict line each (run with -s to see them)."""
import os

import numpy as np

from misical_extractor import features as xf

import misical.features as engine
from misical.poolio import read_pool_arrays

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "..",
                       "tests", "fixtures", "probmaps_t15.npz")


def report(name, passed, detail):
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


def test_cross_implementation_feature_parity():
    data = np.load(FIXTURE)
    worst = 0.0
    bits_equal = True
    for pid in data["ids"]:
        vol = data[f"volume_{int(pid)}"]
        assert vol.shape[0] == 15
        ours = np.array(xf.patch_summary(vol))
        ref = engine.bald_summary(vol)
        worst = max(worst, float(np.abs(ours - [ref.max, ref.min, ref.mean]).max()))
        bits_equal &= xf.patch_presence(vol).tolist() == engine.class_presence(vol).bits.tolist()
    report("feature-parity", worst < 1e-5 and bits_equal,
           f"max summary deviation {worst:.2e} per component (limit 1e-5), "
           f"presence bits identical: {bits_equal}")


def test_extraction_shape(ten_image_pool):
    out, n = ten_image_pool
    data = read_pool_arrays(out)  # raises on any format violation
    report("extraction-shape", n == 640 and data.header.n_patches == 640,
           f"10 paired 512px fixtures at patch 64 -> {n} records, "
           "all passing the engine reader's validation")
