"""Command-line front end for the experiment pipeline.

Exit codes: 0 success, 1 usage or config error, 2 runtime error (missing
artifacts, degenerate data, training failures). Artifact paths written by a
stage are printed to stdout, one per line.
"""
from __future__ import annotations

import argparse
import logging
import sys
import traceback

from . import __version__, config, pipeline
from .errors import ConfigError, CrossrecError

_STAGE_HELP = (
    ("synth", "generate synthetic interaction data and ground-truth latents"),
    ("prepare", "load, filter, and split the two domains"),
    ("pretrain", "train one frozen embedding backbone per domain"),
    ("train", "fit a transfer model (--method adapter|emcdr)"),
    ("evaluate", "rank the held-out cold-start cohort (--method adapter|emcdr)"),
    ("sweep", "retrain both methods across overlap fractions"),
    ("analyze", "latent distance and disentanglement diagnostics"),
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crossrec",
        description="Cold-start cross-domain recommendation experiments.",
    )
    parser.add_argument("--version", action="version",
                        version=f"crossrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="<command>")
    for name, help_text in _STAGE_HELP:
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", required=True, metavar="PATH",
                        help="experiment config JSON")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="override the config output directory")
        sp.add_argument("--eta", type=float, default=None,
                        help="override the training-overlap fraction")
        if name in ("train", "evaluate"):
            sp.add_argument("--method", required=True,
                            choices=pipeline.METHODS,
                            help="transfer model to use")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse exits 0 for --help/--version, 2 for usage errors
        return 0 if err.code == 0 else 1

    try:
        cfg = config.load_config(args.config, seed=args.seed,
                                 output_dir=args.out, eta=args.eta)
    except ConfigError as err:
        print(f"crossrec: {err}", file=sys.stderr)
        return 1

    try:
        if args.command == "synth":
            written = pipeline.cmd_synth(cfg)
        elif args.command == "prepare":
            written = pipeline.cmd_prepare(cfg)
        elif args.command == "pretrain":
            written = pipeline.cmd_pretrain(cfg)
        elif args.command == "train":
            written = pipeline.cmd_train(cfg, args.method)
        elif args.command == "evaluate":
            written = pipeline.cmd_evaluate(cfg, args.method)
        elif args.command == "sweep":
            written = pipeline.cmd_sweep(cfg)
        else:
            written = pipeline.cmd_analyze(cfg)
    except ConfigError as err:
        print(f"crossrec: {err}", file=sys.stderr)
        return 1
    except CrossrecError as err:
        print(f"crossrec: {err}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2

    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
