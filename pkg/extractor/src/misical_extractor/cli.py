"""Command line for the extraction sidecar."""
from __future__ import annotations

import argparse
import os
import sys

from .errors import ExtractorError
from .extract import ExtractionJob, dump_probmaps, extract


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="misical-extract",
        description="Turn images plus ground-truth masks into a pool file "
                    "of patch features from stochastic segmentation passes")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--masks", required=True, help="mask directory (class-index PNGs)")
    p.add_argument("--out", required=True, help="pool file to write")
    p.add_argument("--classes", type=int, required=True, help="number of classes")
    p.add_argument("--mc-passes", dest="mc_passes", type=int, default=15,
                   help="stochastic forward passes per image")
    p.add_argument("--patch", type=int, default=64, help="patch side in pixels")
    p.add_argument("--resize", type=int, default=512, help="square resize target")
    p.add_argument("--model", default="tiny", help="backbone id, optionally id:ckpt.pt")
    p.add_argument("--seed", type=int, default=0, help="dropout-mask seed")
    p.add_argument("--no-entropy", action="store_true",
                   help="omit the mean-entropy column")
    p.add_argument("--dump-probmaps", dest="dump_ids",
                   help="comma-separated patch ids: write raw probability "
                        "volumes instead of a pool file")
    p.add_argument("--force", action="store_true", help="overwrite existing output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if os.path.exists(args.out) and not args.force:
        print(f"error: refusing to overwrite {args.out}; pass --force", file=sys.stderr)
        return 2
    job = ExtractionJob(
        image_dir=args.images, mask_dir=args.masks, out_path=args.out,
        n_classes=args.classes, model=args.model, mc_passes=args.mc_passes,
        patch_size=args.patch, resize_to=args.resize, seed=args.seed,
        with_entropy=not args.no_entropy)
    try:
        if args.dump_ids:
            ids = [int(x) for x in args.dump_ids.split(",") if x.strip()]
            dump_probmaps(job, ids, args.out)
            print(f"wrote {len(ids)} probability volumes to {args.out}")
        else:
            n = extract(job)
            print(f"wrote {n} records to {args.out}")
        return 0
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
