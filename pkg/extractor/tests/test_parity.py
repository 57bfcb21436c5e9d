"""Cross-implementation check against the selection engine.

Both codebases compute patch features from the same committed fixture
of probability volumes; the engine is imported here only as the oracle.
"""
import os

import numpy as np
import pytest

from misical_extractor import features as xf

import misical.features as engine

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "..",
                       "tests", "fixtures", "probmaps_t15.npz")


@pytest.fixture(scope="module")
def volumes():
    data = np.load(FIXTURE)
    return [data[f"volume_{int(pid)}"] for pid in data["ids"]]


def test_fixture_has_fifteen_passes(volumes):
    assert all(v.shape[0] == 15 for v in volumes)


def test_disagreement_summary_parity(volumes):
    for vol in volumes:
        ours = xf.patch_summary(vol)
        ref = engine.bald_summary(vol)
        assert ours[0] == pytest.approx(ref.max, abs=1e-5)
        assert ours[1] == pytest.approx(ref.min, abs=1e-5)
        assert ours[2] == pytest.approx(ref.mean, abs=1e-5)


def test_presence_parity(volumes):
    for vol in volumes:
        ours = xf.patch_presence(vol)
        ref = engine.class_presence(vol).bits
        assert ours.tolist() == ref.tolist()


def test_pixel_scores_parity(volumes):
    for vol in volumes:
        ours = xf.pixel_disagreement(vol)
        ref = engine.pixel_bald_values(vol)
        np.testing.assert_allclose(ours, ref, atol=1e-5)


def test_parity_on_random_volumes():
    rng = np.random.default_rng(0)
    for _ in range(25):
        t, k, c = int(rng.integers(2, 9)), int(rng.integers(1, 40)), int(rng.integers(2, 12))
        vol = rng.dirichlet(np.ones(c), size=(t, k))
        np.testing.assert_allclose(xf.pixel_disagreement(vol),
                                   engine.pixel_bald_values(vol), atol=1e-5)
        assert xf.patch_presence(vol).tolist() == engine.class_presence(vol).bits.tolist()
