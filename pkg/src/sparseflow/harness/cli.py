"""``sparseflow`` command line.

Exit codes: 0 success, 1 validation error, 2 missing inputs.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..container import FormatError
from ..strec import ConfigError as ModelConfigError
from . import pipeline
from .config import OUT_ENV, ConfigError, load_config, resolve_out
from .report import cmd_report

COMMANDS = ("generate", "sparsify", "aggregate", "train", "evaluate", "sweep", "report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sparseflow",
        description="Sparse probe-data traffic estimation experiments.",
        epilog=f"The output directory is --out, else ${OUT_ENV}, else the config's output_dir.",
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="experiment config (JSON); optional for 'report' when --out is given")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="run only this sweep seed")
    ap.add_argument("--variant", choices=("grid", "graph"), help="run only this variant")
    ap.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return ap


def run(args) -> int:
    if args.command == "report":
        cfg = load_config(args.config) if args.config else None
        cmd_report(resolve_out(cfg, args.out))
        return 0
    if not args.config:
        raise ConfigError("--config: required for this command")
    cfg = load_config(args.config).restricted(args.variant, args.seed)
    out = resolve_out(cfg, args.out)
    getattr(pipeline, f"cmd_{args.command}")(cfg, out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except (ConfigError, ModelConfigError) as exc:
        print(f"sparseflow: validation error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, FormatError) as exc:
        print(f"sparseflow: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
