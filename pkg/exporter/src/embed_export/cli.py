"""Exporter command line: ``export`` writes an interchange file from a
dataset and an encoder checkpoint; ``verify`` checks an existing file."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportError, ExportSpec, export
from .interchange import FormatError, verify_interchange


def cmd_export(args) -> int:
    spec = ExportSpec(
        encoder=args.encoder,
        dataset=args.data,
        output=args.out,
        max_length=args.max_len,
        pooled=args.pool,
    )
    report = export(spec)
    print(f"wrote {report.count} examples (dim {report.dim}) to {args.out}")
    if report.truncated_ids:
        print(f"truncated: {report.truncated_ids}")
    return 0


def cmd_verify(args) -> int:
    summary = verify_interchange(args.path)
    for line in summary.lines():
        print(line)
    return 0 if summary.finite else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="klcbl-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="encode a dataset into an interchange file")
    p_exp.add_argument("--encoder", required=True, help="checkpoint name or local path")
    p_exp.add_argument("--data", required=True, help="dataset file (id<TAB>label<TAB>text)")
    p_exp.add_argument("--out", required=True, help="output interchange file")
    p_exp.add_argument("--max-len", type=int, default=512)
    p_exp.add_argument("--pool", choices=("first_token", "mean"), default="first_token")
    p_exp.set_defaults(func=cmd_export)

    p_ver = sub.add_parser("verify", help="validate an interchange file")
    p_ver.add_argument("path")
    p_ver.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExportError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
