"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import parse_file
from .errors import ConfigError, DataError, NumericError

log = logging.getLogger("slgcn")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slgcn",
        description=(
            "Single-layer graph-convolutional recommender: distribution-aware "
            "neighbor sampling, preprocessing-time aggregation, training and "
            "ranking evaluation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config file")
        return p

    add("ingest", "load the interaction file, write id maps and the split manifest")
    p = add("similarity", "compute and cache DA similarity over candidate pairs")
    p.add_argument("--text", action="store_true", help="also export 'u v metric value' text files")
    add("sample", "build the sampled subgraph and score its quality (ANS/MANS)")
    add("train", "train the model; writes checkpoint and training log")
    add("evaluate", "evaluate the trained model; writes the metrics file")
    p = add("compare-sampling", "full pipeline per strategy with shared seeds")
    p.add_argument(
        "--strategies",
        default="random,da",
        help="comma-separated subset of random,walk,1ord,2ord,da",
    )
    p = add("benchmark", "run the cost benchmark against the recursive simulator")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--epochs", type=int, default=None)
    add("report", "combine metrics files in the output dir into one summary")
    add("run", "run the full pipeline end to end")
    return parser


def _dispatch(args) -> int:
    from .pipeline import Pipeline, compare_sampling, run_pipeline, write_run_summary

    cfg = parse_file(args.config)
    if args.command == "ingest":
        pl = Pipeline(cfg)
        pl.graph()
        split = pl.split()
        log.info(
            "ingested %d users, %d items; split %d/%d/%d",
            pl.graph().n_users,
            pl.graph().n_items,
            len(split.train),
            len(split.validation),
            len(split.test),
        )
    elif args.command == "similarity":
        pl = Pipeline(cfg)
        pl.similarity()
        if args.text:
            for path in pl.export_similarity_text():
                log.info("wrote %s", path)
    elif args.command == "sample":
        pl = Pipeline(cfg)
        q = pl.quality()
        log.info(
            "subgraph quality: mans_users=%.4f mans_items=%.4f",
            q.mans_users,
            q.mans_items,
        )
    elif args.command == "train":
        pl = Pipeline(cfg)
        pl.trained()
    elif args.command == "evaluate":
        pl = Pipeline(cfg)
        report = pl.evaluate()
        print(f"auc={report.auc!r}")
        print(f"ndcg10={report.ndcg_at_10!r}")
    elif args.command == "compare-sampling":
        strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
        rows = compare_sampling(cfg, strategies)
        for r in rows:
            print(
                f"{r['strategy']}: mans_users={r['mans_users']:.4f} "
                f"mans_items={r['mans_items']:.4f} auc={r['auc']:.4f} "
                f"ndcg10={r['ndcg10']:.4f}"
            )
    elif args.command == "benchmark":
        from .benchmark import benchmark_costs

        report, _ = benchmark_costs(cfg, layers=args.layers, epochs=args.epochs)
        for key, value in report.items():
            print(f"{key}={value}")
    elif args.command == "report":
        pl = Pipeline(cfg)
        path = write_run_summary(pl)
        print(path)
    elif args.command == "run":
        report, pl = run_pipeline(cfg)
        write_run_summary(pl)
        print(f"auc={report.auc!r}")
        print(f"ndcg10={report.ndcg_at_10!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
