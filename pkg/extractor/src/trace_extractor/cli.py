"""Command-line entry: ``trace-extract CONFIG.yaml``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, ExtractorError
from .extract import extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trace-extract",
        description="Record per-visual-layer next-token traces from a "
                    "vision-language model.",
    )
    parser.add_argument("config", help="YAML config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        report = extract(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ExtractorError as exc:
        print(f"extraction error: {exc}", file=sys.stderr)
        return 2

    print(f"wrote {len(report.written)} trace(s) to {cfg.output_dir / 'traces'}")
    if report.skipped:
        print(f"skipped {len(report.skipped)} question(s): "
              f"{', '.join(report.skipped)}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
