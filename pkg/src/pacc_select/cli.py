"""Command-line entry point: gen, ingest, train, score, select,
simulate-month, evaluate, explain and serve.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .dsl import RuleParseError
from .runtime import AppRuntime, DataError
from .sources import IngestError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacc-select",
        description="Hybrid rule-based audit case selection pipeline.",
    )
    parser.add_argument("--config", help="path to a JSON config file (default: $PACC_SELECT_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic corpus with ground truth")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("--fraud-rate", type=float, default=0.05)
    gen.add_argument("--clusters", type=int, default=4)

    sub.add_parser("ingest", help="load and validate the corpus and source files")

    train = sub.add_parser("train", help="fit models on the audited slice of the corpus")
    train.add_argument("--out", help="models output path (default from config)")

    score = sub.add_parser("score", help="score every case against its rule base")
    score.add_argument("--rules", help="override the missing-trader rule file")
    score.add_argument("--out", help="reports output path (default from config)")
    score.add_argument("--workers", type=int, default=1)

    select = sub.add_parser("select", help="compose an audit selection from the plan")
    select.add_argument("--plan", help="plan JSON path (default from config)")

    sub.add_parser("simulate-month", help="advance the clock one month: score batches and UID days")

    sub.add_parser("evaluate", help="success rates per selection strategy")

    explain = sub.add_parser("explain", help="print the explanation document for one case")
    explain.add_argument("--case", required=True)

    serve = sub.add_parser("serve", help="run the analyst HTTP API")
    serve.add_argument("--port", type=int, help="port (default from config)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        config = load_config(args.config)
        if args.command == "gen":
            runtime = AppRuntime(config)
            counts = runtime.generate(args.n, args.fraud_rate, args.seed, args.clusters)
            print(
                f"generated {counts['cases']} cases ({counts['frauds']} fraudulent), "
                f"{counts['watchlist_links']} watchlist links, "
                f"{counts['registry_companies']} registry entries"
            )
        elif args.command == "ingest":
            runtime = AppRuntime(config)
            corpus = runtime.load_corpus()
            print(
                f"loaded {len(corpus.cases)} cases, "
                f"{len(runtime.hub.watchlist.links)} watchlist links, "
                f"{len(runtime.hub.registry.address_of)} registry entries"
            )
        elif args.command == "train":
            if args.out:
                config.models = args.out
            runtime = AppRuntime(config)
            models = runtime.train()
            print(
                f"trained: k={models.clusters.k}, "
                f"{len(models.classifiers)} cluster classifiers, "
                f"effectiveness={'yes' if models.effectiveness else 'no'}"
            )
        elif args.command == "score":
            if args.rules:
                config.rules_missing_trader = args.rules
            if args.out:
                config.reports = args.out
            runtime = AppRuntime(config)
            reports = runtime.score(workers=args.workers)
            digests = sorted({r.ruleset_digest for r in reports})
            print(f"scored {len(reports)} cases (rule bases {', '.join(digests)})")
        elif args.command == "select":
            runtime = AppRuntime(config)
            composed = runtime.select(plan_path=args.plan)
            for warning in composed.warnings:
                print(f"warning: {warning}", file=sys.stderr)
            by_strategy: dict[str, int] = {}
            for d in composed.decisions:
                by_strategy[d.strategy.value] = by_strategy.get(d.strategy.value, 0) + 1
            parts = ", ".join(f"{k}={v}" for k, v in sorted(by_strategy.items()))
            print(f"selected {len(composed.decisions)} cases ({parts})")
        elif args.command == "simulate-month":
            runtime = AppRuntime(config)
            summary = runtime.simulate_month()
            print(
                f"month {summary['month']}: {summary['batches']} scoring batches, "
                f"{summary['uid_processed']} UID checks, "
                f"{summary['newly_matured']} outcomes matured"
            )
        elif args.command == "evaluate":
            runtime = AppRuntime(config)
            report = runtime.evaluate()
            print(report.to_text(), end="")
        elif args.command == "explain":
            runtime = AppRuntime(config)
            print(runtime.explain(args.case), end="")
        elif args.command == "serve":
            if args.port:
                config.port = args.port
            from .api import serve

            serve(config)
        return EXIT_OK
    except (DataError, IngestError, RuleParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
