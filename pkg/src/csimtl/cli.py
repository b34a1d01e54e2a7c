"""Command-line entry point.

Subcommands: generate, analyze, train, eval, complexity, embed, sweep, and
config-reference.  Exit codes: 0 success, 2 configuration error, 3 data
integrity error (stale hashes, spec mismatches, locked outputs), 4 training
divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiment import (ConfigError, DataIntegrityError, default_config,
                         load_config, run_analyze, run_complexity, run_embed,
                         run_eval, run_generate, run_sweep, run_train,
                         write_reference_config)
from .training import TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRITY = 3
EXIT_DIVERGED = 4


def _add_common(parser, data=False, weights=False):
    parser.add_argument("--config", type=Path, default=None,
                        help="experiment config (INI); defaults to the "
                             "desk-scale configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="pin BLAS to one thread for bitwise-reproducible "
                             "outputs")
    parser.add_argument("--out", type=Path, required=True,
                        help="output directory (locked while running)")
    if data:
        parser.add_argument("--data", type=Path, required=True,
                            help="directory written by 'generate'")
    if weights:
        parser.add_argument("--weights", type=Path, required=True,
                            help="directory written by 'train'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csimtl",
        description="Multi-scenario CSI feedback workbench: dataset synthesis, "
                    "deployment-mode training, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize and preprocess a dataset")
    _add_common(p)

    p = sub.add_parser("analyze", help="feature statistics CSVs for a dataset")
    _add_common(p, data=True)
    p.add_argument("--hist-bins", type=int, default=60)
    p.add_argument("--corr-samples", type=int, default=100,
                   help="samples per task entering the correlation matrices")

    p = sub.add_parser("train", help="train the configured deployment mode")
    _add_common(p, data=True)

    p = sub.add_parser("eval", help="evaluate trained weights")
    _add_common(p, data=True, weights=True)
    p.add_argument("--oracle-labels", action="store_true",
                   help="route with true task labels (upper bound)")
    p.add_argument("--raw-domain", action="store_true",
                   help="report NMSE on denormalized complex channels")

    p = sub.add_parser("complexity", help="params/FLOPs grid over the family")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("embed", help="2-D PCA embedding of encoder codes")
    _add_common(p, data=True, weights=True)

    p = sub.add_parser("sweep", help="NMSE versus sampling-range diameter")
    _add_common(p)
    p.add_argument("--diameters", type=float, nargs="+",
                   default=[2.0, 20.0, 80.0], help="region diameters (meters)")
    p.add_argument("--samples", type=int, default=1200,
                   help="samples per diameter")

    p = sub.add_parser("config-reference",
                       help="write a commented config with all defaults")
    p.add_argument("--out", type=Path, required=True,
                   help="path of the reference INI to write")
    return parser


def _load(args):
    if args.config is None:
        cfg = default_config(seed=args.seed if args.seed is not None else 1)
        return cfg
    return load_config(args.config, seed_override=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "deterministic", False):
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=1)
    try:
        if args.command == "config-reference":
            args.out.parent.mkdir(parents=True, exist_ok=True)
            write_reference_config(args.out)
            print(f"reference config written to {args.out}")
            return EXIT_OK
        if args.command == "complexity":
            run_complexity(args.out)
            print((Path(args.out) / "complexity.txt").read_text(), end="")
            return EXIT_OK

        cfg = _load(args)
        deterministic = bool(getattr(args, "deterministic", False))
        if args.command == "generate":
            manifest = run_generate(cfg, args.out, deterministic)
            print(f"dataset written; manifest: {manifest}")
        elif args.command == "analyze":
            run_analyze(cfg, args.data, args.out, hist_bins=args.hist_bins,
                        corr_samples_per_task=args.corr_samples)
            print(f"analytics CSVs written to {args.out}")
        elif args.command == "train":
            run_train(cfg, args.data, args.out, deterministic)
            print(f"weights written to {args.out}")
        elif args.command == "eval":
            report = run_eval(cfg, args.data, args.weights, args.out,
                              oracle=args.oracle_labels,
                              deterministic=deterministic,
                              raw_domain=args.raw_domain)
            print((Path(args.out) / "eval_report.txt").read_text(), end="")
        elif args.command == "embed":
            path = run_embed(cfg, args.data, args.weights, args.out)
            print(f"embedding written to {path}")
        elif args.command == "sweep":
            results = run_sweep(cfg, args.out, args.diameters, args.samples)
            for diameter, value in results:
                print(f"diameter {diameter:g} m -> NMSE {value:.2f} dB")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataIntegrityError as e:
        print(f"data integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
