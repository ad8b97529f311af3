"""``nt`` command line.

Exit codes: 0 success, 1 configuration/startup error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from newstweet.analytics import Analytics, render
from newstweet.archive import KINDS
from newstweet.config import PipelineConfig
from newstweet.errors import ArchiveError, ConfigError
from newstweet.pipeline import STAGES, Pipeline, StageFailed, run_daemon

log = logging.getLogger("newstweet")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--report", choices=["text", "json"], default="text",
                        help="print the run report as JSON on stdout")

    parser = argparse.ArgumentParser(prog="nt", description="news/tweet embedding collector")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES[:-1]:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage only")
    sub.add_parser("run", parents=[common], help="run every stage once, in order")
    sub.add_parser("daemon", parents=[common], help="run stages on their intervals until signalled")

    stats = sub.add_parser("stats", parents=[common], help="print a descriptive table")
    stats.add_argument("--table", type=int, choices=[1, 2, 3, 4], required=True)
    stats.add_argument("--format", choices=["tsv", "json", "markdown"], default="tsv")

    export = sub.add_parser("export", parents=[common], help="dump records as NDJSON")
    export.add_argument("--kind", choices=list(KINDS) + ["blob"], required=True)
    export.add_argument("--output", "-o", help="file to write (default stdout)")

    sub.add_parser("compact", parents=[common], help="rewrite logs keeping latest records")
    return parser


def _print_report(report, fmt):
    if fmt == "json":
        print(json.dumps(report.to_dict(), sort_keys=True))
    else:
        for key, value in report.to_dict().items():
            if value:
                print(f"{key}: {value}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = PipelineConfig.load(args.config, args.set)
    except ConfigError as exc:
        print(f"nt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=config["log_level"], stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "stats":
            with Pipeline(config, read_only=True) as p:
                out = render(Analytics(p.archive), args.table, args.format,
                             k=config["analytics.top_k"],
                             min_articles=config["analytics.min_articles"])
            sys.stdout.write(out)
            return EXIT_OK
        if args.command == "export":
            with Pipeline(config, read_only=True) as p:
                if args.output:
                    with open(args.output, "w", encoding="utf-8") as fh:
                        p.archive.export(args.kind, fh)
                else:
                    p.archive.export(args.kind, sys.stdout)
            return EXIT_OK
        if args.command == "compact":
            with Pipeline(config) as p:
                dropped = p.archive.compact()
            print(json.dumps(dropped, sort_keys=True))
            return EXIT_OK
        if args.command == "daemon":
            run_daemon(config)
            return EXIT_OK
        stages = STAGES if args.command == "run" else (args.command,)
        with Pipeline(config) as p:
            report = p.run_stages(stages)
        _print_report(report, args.report)
        return EXIT_OK
    except ConfigError as exc:
        print(f"nt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailed as exc:
        log.error("%s", exc)
        print(f"nt: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ArchiveError as exc:
        print(f"nt: archive error: {exc}", file=sys.stderr)
        return EXIT_STAGE if args.command in ("run", *STAGES[:-1]) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
