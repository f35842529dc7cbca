"""Command-line entry point: ``aspectqa <command> --config cfg.json``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from .config import load_config
from .pipeline import Pipeline

COMMANDS = ("ingest", "build-graph", "gen-qa", "summarize", "evaluate", "report", "run-all")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


def _csv(value: Optional[str]) -> Optional[List[str]]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline config (JSON)")
    common.add_argument("--force", action="store_true", help="recompute even if artifacts are up to date")
    common.add_argument("--books", help="comma-separated book ids (default: all in manifest)")
    common.add_argument("--aspects", help="comma-separated aspect names (default: all configured)")
    common.add_argument("--method", help="comma-separated methods: hier, inc, naiverag")
    common.add_argument("--mock", action="store_true", help="use the offline mock backend")
    common.add_argument("--log-level", default="INFO")

    p = argparse.ArgumentParser(prog="aspectqa", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="ingest the corpus manifest")
    sub.add_parser("build-graph", parents=[common], help="extract and build per-book knowledge graphs")
    qa = sub.add_parser("gen-qa", parents=[common], help="generate QA pairs and aspect assignments")
    qa.add_argument("--min-importance", type=int)
    qa.add_argument("--max-edges", type=int)
    qa.add_argument("--top-k", type=int)
    sm = sub.add_parser("summarize", parents=[common], help="generate summaries")
    sm.add_argument("--aspect", default="ALL", help="aspect name, ALL, or GENERIC")
    ev = sub.add_parser("evaluate", parents=[common], help="answer QAs from summaries and score them")
    ev.add_argument("--generic", action="store_true", help="answer aspect QAs from GENERIC summaries")
    rp = sub.add_parser("report", parents=[common], help="aggregate evaluation records")
    rp.add_argument("--group-by", choices=("aspect", "size", "overall", "reference"), default="overall")
    rp.add_argument("--weight-by-book", action="store_true")
    rp.add_argument("--include-generic", action="store_true", help="also report {method}-generic records")
    sub.add_parser("run-all", parents=[common], help="run every stage")
    return p


def _apply_overrides(cfg, args) -> None:
    from dataclasses import replace

    if args.mock:
        cfg.gateway.kind = "mock"
    if getattr(args, "min_importance", None) is not None:
        cfg.qagen = replace(cfg.qagen, min_importance=args.min_importance)
    if getattr(args, "max_edges", None) is not None:
        cfg.qagen = replace(cfg.qagen, max_edges=args.max_edges)
    if getattr(args, "top_k", None) is not None:
        cfg.qagen = replace(cfg.qagen, top_k=args.top_k)


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        pipe = Pipeline(cfg, force=args.force)
        books, aspects, methods = _csv(args.books), _csv(args.aspects), _csv(args.method)
        cmd = args.command
        if cmd == "ingest":
            for b in pipe.ingest(books):
                print(f"{b.id}\t{b.word_count}\t{b.size_bucket}")
        elif cmd == "build-graph":
            pipe.build_graphs(books)
        elif cmd == "gen-qa":
            pipe.gen_qa(books, aspects)
        elif cmd == "summarize":
            aspect = args.aspect if aspects is None else ",".join(aspects)
            pipe.summarize(methods, books, aspect)
        elif cmd == "evaluate":
            pipe.evaluate(methods, books, aspects, generic=args.generic)
        elif cmd == "report":
            if args.group_by == "reference":
                print(pipe.report_reference(methods, books), end="")
            else:
                ms = methods or list(cfg.methods)
                if args.include_generic:
                    ms = ms + [f"{m}-generic" for m in ms]
                print(pipe.report(args.group_by, ms, books, weight_by_book=args.weight_by_book), end="")
        elif cmd == "run-all":
            print(pipe.run_all(methods, books), end="")
    except Exception as exc:
        logging.getLogger("aspectqa").debug("command failed", exc_info=True)
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
