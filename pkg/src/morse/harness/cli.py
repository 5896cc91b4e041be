"""``python -m morse <command>``: train-dash, train-dot, sample and bench.

Exit codes: 0 success, 2 configuration error, 3 numeric failure (diverged
training, or a benchmark with no usable speedup point), 4 checkpoint
integrity error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..engine import ChainSource
from ..errors import ConfigurationError, DivergenceError, EmptyAverageError, IntegrityError
from . import pipelines
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INTEGRITY = 0, 2, 3, 4


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morse", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment YAML file")
    common.add_argument("--seed", type=_u64, help="overrides the config seed")
    common.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    common.add_argument("--threads", type=int, help="chain-evaluation workers (fallback: MORSE_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("train-dash", parents=[common], help="train the Dash denoiser")
    p = sub.add_parser("train-dot", parents=[common], help="train a Dot on a frozen Dash")
    p.add_argument("--dash-ckpt", type=Path)
    for name in ("sample", "bench"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--dash-ckpt", type=Path)
        p.add_argument("--dot-ckpt", type=Path)
        p.add_argument("--chain-source", choices=[c.value for c in ChainSource])
        if name == "bench":
            p.add_argument("--oracle-dot", action="store_true", help="use the exact Dot (lossless reference)")
    return parser


def run(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or Path(cfg.output_dir)
    threads = pipelines.resolve_threads(args.threads, os.environ)
    if args.command == "train-dash":
        return pipelines.run_train_dash(cfg, out)
    dash = args.dash_ckpt or out / "dash.ckpt"
    if args.command == "train-dot":
        return pipelines.run_train_dot(cfg, out, dash)
    chain = ChainSource(args.chain_source) if args.chain_source else None
    dot = args.dot_ckpt
    if args.command == "sample":
        if dot is None and (out / "dot.ckpt").exists():
            dot = out / "dot.ckpt"
        return pipelines.run_sample(cfg, out, dash, dot, chain, threads)
    if dot is None and not args.oracle_dot:
        dot = out / "dot.ckpt"
    return pipelines.run_bench(cfg, out, dash, dot, args.oracle_dot, chain, threads).summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        result = run(args)
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, EmptyAverageError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
