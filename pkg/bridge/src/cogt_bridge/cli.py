"""cogt-parse command line entry point."""

from __future__ import annotations

import argparse
import sys

from .bridge import BridgeConfig, parse_file, write_stats
from .errors import BridgeError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cogt-parse",
        description="Parse a caption file (one caption per line) to CoNLL-U.",
    )
    p.add_argument("--in", dest="input_path", required=True, help="caption file")
    p.add_argument("--out", dest="output_path", required=True, help="CoNLL-U output")
    p.add_argument("--backend", default="rules", help="parser backend name")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument(
        "--stats",
        default=None,
        help="stats JSON path (default: <out>.stats.json)",
    )
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = BridgeConfig(
            input_path=args.input_path,
            output_path=args.output_path,
            parser_backend=args.backend,
            batch_size=args.batch_size,
        )
        stats = parse_file(config)
        write_stats(stats, args.stats or args.output_path + ".stats.json")
    except BridgeError as exc:
        print(f"cogt-parse: error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"cogt-parse: error: {exc}", file=sys.stderr)
        return 1
    print(
        f"parsed {stats.sentences} captions "
        f"({stats.tokens} tokens, backend {stats.backend_version})"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
