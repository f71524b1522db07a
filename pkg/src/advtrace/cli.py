"""Command-line entry point.

Subcommands mirror the pipeline stages; `all` chains them. Exit codes:
0 success, 2 config error, 3 missing stage input, 4 attack exhaustion.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import ConfigError, DatasetExhaustedError, StageInputError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advtrace",
        description="Train separated classifier copies, attack them with "
                    "hard-label black-box attacks, and trace attack origins.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("train-classifier", "train the shared classifier"),
        ("train-tracers", "train per-copy tracers and write copy bundles"),
        ("attack", "generate adversarial records per (alpha, attack) cell"),
        ("trace", "trace record origins and estimate multi-copy accuracy"),
        ("report", "consolidate results into report.json and CSV tables"),
        ("all", "run the whole pipeline"),
        ("init-config", "write a default config file and exit"),
    ):
        p = sub.add_parser(name, help=help_)
        if name == "init-config":
            p.add_argument("path", help="where to write the default config")
            continue
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed override; re-derives all stage seeds")
        if name in ("attack", "all"):
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel workers for attack cells")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "init-config":
        with open(args.path, "w") as f:
            f.write(harness.DEFAULT_CONFIG_TOML)
        print(f"wrote {args.path}")
        return 0
    try:
        cfg = harness.load_config(args.config, out_override=args.out,
                                  master_seed=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        if args.command == "train-classifier":
            path = harness.cmd_train_classifier(cfg)
            print(f"classifier checkpoint: {path}")
        elif args.command == "train-tracers":
            dirs = harness.cmd_train_tracers(cfg)
            print("copy bundles: " + ", ".join(dirs))
        elif args.command == "attack":
            statuses = harness.cmd_attack(cfg, jobs=args.jobs)
            for s in statuses:
                print(f"{s['cell']}: {s['records']} records, "
                      f"{s['queries_total']} queries")
        elif args.command == "trace":
            summary = harness.cmd_trace(cfg)
            for cell, c in sorted(summary["cells"].items()):
                print(f"{cell}: tracing accuracy {c['tracing_accuracy']:.3f}")
        elif args.command == "report":
            path = harness.cmd_report(cfg)
            print(f"report: {path}")
        elif args.command == "all":
            path = harness.cmd_all(cfg, jobs=args.jobs)
            print(f"report: {path}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except StageInputError as e:
        print(f"missing stage input: {e}", file=sys.stderr)
        return 3
    except DatasetExhaustedError as e:
        print(f"attack exhaustion: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
