import os

import numpy as np

from misical_extractor.cli import main

from misical.poolio import read_pool_arrays

from conftest import N_CLASSES


def test_extract_cli(two_image_dataset, tmp_path, capsys):
    img_dir, mask_dir = two_image_dataset
    out = str(tmp_path / "pool.msal")
    rc = main(["--images", img_dir, "--masks", mask_dir, "--out", out,
               "--classes", str(N_CLASSES), "--mc-passes", "2", "--patch", "64",
               "--resize", "512", "--seed", "4"])
    assert rc == 0
    assert "128 records" in capsys.readouterr().out
    data = read_pool_arrays(out)
    assert data.header.n_patches == 128


def test_cli_refuses_overwrite(two_image_dataset, tmp_path):
    img_dir, mask_dir = two_image_dataset
    out = str(tmp_path / "pool.msal")
    args = ["--images", img_dir, "--masks", mask_dir, "--out", out,
            "--classes", str(N_CLASSES), "--mc-passes", "2"]
    assert main(args) == 0
    assert main(args) == 2
    assert main(args + ["--force"]) == 0


def test_cli_dump_probmaps(two_image_dataset, tmp_path):
    img_dir, mask_dir = two_image_dataset
    out = str(tmp_path / "vols.npz")
    rc = main(["--images", img_dir, "--masks", mask_dir, "--out", out,
               "--classes", str(N_CLASSES), "--mc-passes", "3",
               "--dump-probmaps", "0,5"])
    assert rc == 0
    data = np.load(out)
    assert set(data.files) == {"volume_0", "volume_5", "ids"}


def test_cli_reports_pipeline_errors(two_image_dataset, tmp_path, capsys):
    img_dir, mask_dir = two_image_dataset
    rc = main(["--images", img_dir, "--masks", mask_dir,
               "--out", str(tmp_path / "x.msal"), "--classes", str(N_CLASSES),
               "--mc-passes", "2", "--patch", "99"])
    assert rc == 1
    assert "error" in capsys.readouterr().err
