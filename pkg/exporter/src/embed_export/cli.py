"""Command line entry point."""

import argparse
import sys

from embed_export.corpus import CorpusError
from embed_export.export import export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Encode a labeled text corpus into an LPND embedding file.")
    parser.add_argument("--corpus", required=True,
                        help="line-delimited JSON records {text, labels[]}")
    parser.add_argument("--manifest", required=True,
                        help="JSON map of split name to label names")
    parser.add_argument("--encoder", default="hashed64-v1",
                        help="encoder name (default: hashed64-v1)")
    parser.add_argument("--max-tokens", type=int, default=64,
                        help="keep at most this many leading tokens (default: 64)")
    parser.add_argument("--out", required=True, help="output LPND path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = export(args.corpus, args.manifest, args.encoder,
                        args.max_tokens, args.out)
    except (CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {report.sentences} sentences ({report.skipped} skipped), "
          f"{report.labels} labels, d={report.d}, encoder {report.encoder} "
          f"-> {args.out}")
    return 0
