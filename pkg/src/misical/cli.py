"""Command-line entry points: run, synth, compare, verify.

Exit codes: 0 success, 1 hard failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

from . import verify as verify_mod
from .config import SCHEMA, build_run_config, load_config_file
from .errors import ConfigError, MisicalError
from .runner import compare_command, run_command
from .synth import SynthConfig, generate_pool, prevalences

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pool", help="pool file path")
    p.add_argument("--target-class", dest="target_class", type=int,
                   help="class index to mine for")
    p.add_argument("--policy", help="random | entropy | bald | coreset | misical")
    p.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2,3,4")
    p.add_argument("--out", help="output directory")
    p.add_argument("--budget-frac", dest="total_frac", type=float,
                   help="total labelling budget as a fraction of the pool")
    p.add_argument("--initial-frac", dest="initial_frac", type=float,
                   help="initial labelled fraction")
    p.add_argument("--initial-count", dest="initial_count", type=int,
                   help="initial labelled patch count (overrides --initial-frac)")
    p.add_argument("--config", help="INI config file; CLI flags win over its keys")
    p.add_argument("--preset", default="default", choices=("default", "appendix"),
                   help="named hyperparameter preset")
    p.add_argument("--reward", help="categorical | delta-iou")
    p.add_argument("--iou-model", dest="iou_model", help="accuracy-model JSON path")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--no-plots", dest="plots", action="store_false", default=None,
                   help="skip figure rendering")
    # every remaining config key is a flag too
    flagged = {"pool", "target_class", "policy", "seeds", "out", "total_frac",
               "initial_frac", "initial_count", "reward", "iou_model", "plots"}
    for section in SCHEMA.values():
        for key in section:
            if key in flagged:
                continue
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, help=argparse.SUPPRESS)


def _collect_cli_values(args: argparse.Namespace) -> dict:
    values = {}
    for section in SCHEMA.values():
        for key, parse in section.items():
            raw = getattr(args, key, None)
            if raw is None:
                continue
            values[key] = parse(raw) if isinstance(raw, str) else raw
    return values


def _build_config(args: argparse.Namespace):
    file_values = load_config_file(args.config) if args.config else None
    return build_run_config(args.preset, file_values, _collect_cli_values(args))


def cmd_run(args: argparse.Namespace) -> int:
    summary = run_command(_build_config(args), force=args.force)
    for metric, stats in summary["metrics"].items():
        print(f"{metric}: {stats['mean']:.6g} +/- {stats['std']:.6g}")
    ty = summary["extra"]["target_yield"]
    print(f"target_yield: {ty['mean']:.6g} +/- {ty['std']:.6g}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    out = compare_command(_build_config(args), policies, force=args.force)
    print(f"best policy by target yield: {out['best']}")
    for row in out["table"]:
        mark = " *" if row.get("significant") else ""
        p = row.get("p_vs_best")
        ptxt = f" p={p:.4g}" if p is not None else ""
        print(f"  {row['policy']:10s} yield {row['yield_mean']:.6g} "
              f"+/- {row['yield_std']:.6g}{ptxt}{mark}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if os.path.exists(args.out) and not args.force:
        raise ConfigError(f"refusing to overwrite existing output ({args.out}); pass --force")
    cooc = []
    for triple in args.cooccur or []:
        parts = triple.split(":")
        if len(parts) != 3:
            raise ConfigError(f"--cooccur expects I:J:PROB, got {triple!r}")
        cooc.append((int(parts[0]), int(parts[1]), float(parts[2])))
    cfg = SynthConfig(
        n_patches=args.patches, n_classes=args.classes, imbalance=args.imbalance,
        prevalence_scale=args.prevalence_scale, flip_prob=args.flip_prob,
        bald_noise=args.bald_noise, padding_frac=args.padding_frac,
        cooccurrence=tuple(cooc), small_classes=tuple(args.small_classes or ()),
        small_class_weight=args.small_class_weight,
        include_entropy=not args.no_entropy,
        patch_capacity=args.patch_capacity, seed=args.seed)
    header, model = generate_pool(cfg, args.out)
    prev = prevalences(cfg)
    print(f"wrote {args.out}: {header.n_patches} patches, {header.n_classes} classes, "
          f"capacity {header.patch_capacity}")
    print(f"accuracy model sidecar: {args.out}.iou.json")
    print("class prevalences: " + ", ".join(f"{p:.3f}" for p in prev))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    failures = 0
    for result in verify_mod.run_all():
        verdict = "PASS" if result.passed else "FAIL"
        print(f"[{verdict}] {result.name}: {result.detail} ({result.seconds:.1f}s)")
        failures += 0 if result.passed else 1
    total = time.perf_counter() - t0
    print(f"{len(verify_mod.ALL_SUITES) - failures}/{len(verify_mod.ALL_SUITES)} "
          f"suites passed in {total:.1f}s")
    if total > 120:
        print("warning: verify exceeded the 120 s budget", file=sys.stderr)
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="misical",
        description="Single-class patch mining with a DDQN over fixed features")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an acquisition run per seed")
    _add_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several policies on shared seeds")
    _add_run_flags(p_cmp)
    p_cmp.add_argument("--policies", required=True,
                       help="comma-separated policy list, e.g. misical,random")
    p_cmp.set_defaults(func=cmd_compare)

    p_syn = sub.add_parser("synth", help="generate a synthetic pool file")
    p_syn.add_argument("--out", required=True, help="pool file to write")
    p_syn.add_argument("--patches", type=int, default=100_000)
    p_syn.add_argument("--classes", type=int, default=16)
    p_syn.add_argument("--imbalance", type=float, default=1.0)
    p_syn.add_argument("--prevalence-scale", dest="prevalence_scale", type=float, default=0.8)
    p_syn.add_argument("--flip-prob", dest="flip_prob", type=float, default=0.1)
    p_syn.add_argument("--bald-noise", dest="bald_noise", type=float, default=0.1)
    p_syn.add_argument("--padding-frac", dest="padding_frac", type=float, default=0.0)
    p_syn.add_argument("--patch-capacity", dest="patch_capacity", type=int, default=4096)
    p_syn.add_argument("--cooccur", action="append",
                       help="I:J:PROB conditional presence, repeatable")
    p_syn.add_argument("--small-class", dest="small_classes", action="append", type=int,
                       help="class drawn as a small object (few pixels), repeatable")
    p_syn.add_argument("--small-class-weight", dest="small_class_weight",
                       type=float, default=0.05)
    p_syn.add_argument("--no-entropy", action="store_true",
                       help="omit the mean-entropy column")
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--force", action="store_true")
    p_syn.set_defaults(func=cmd_synth)

    p_ver = sub.add_parser("verify", help="run the fast self-check suites")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MisicalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
