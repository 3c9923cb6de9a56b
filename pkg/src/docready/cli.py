"""Command-line entry points: train, score, perturb, rank.

Thin argument-parsing layer over the pipeline module. Exit codes: 0 on
success, 1 when the data admits no meaningful score (for example a fully
out-of-vocabulary query), 2 for configuration and I/O problems.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .corpus import EmptyCorpusError, IngestError
from .lda import UnprojectableDocumentError
from .pipeline import (
    ConfigError,
    MetricFailure,
    cmd_perturb,
    cmd_rank,
    cmd_score,
    cmd_train,
    load_run_config,
)

EXIT_OK = 0
EXIT_METRIC = 1
EXIT_CONFIG = 2


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the JSON run config")
    sub.add_argument("--seed", type=int, default=None, help="override the config's master_seed")
    sub.add_argument("--output-dir", default=None, help="override the config's output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docready",
        description=(
            "Score how ready document collections are to answer a question: "
            "topic-space relevance, coherence, and query-perturbation sensitivity."
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="preprocess the corpus and fit one topic model")
    _add_common(p_train)

    p_score = sub.add_parser("score", help="score every document set against the query")
    _add_common(p_score)
    p_score.add_argument(
        "--model",
        default=None,
        help="reuse this trained model for every run instead of retraining",
    )

    p_perturb = sub.add_parser("perturb", help="run the query-perturbation sensitivity harness")
    _add_common(p_perturb)
    p_perturb.add_argument(
        "--perturbations", required=True, help="JSON file listing the perturbations"
    )
    p_perturb.add_argument(
        "--model",
        default=None,
        help="use this trained model instead of training one",
    )

    p_rank = sub.add_parser("rank", help="merge score reports into one ranking")
    p_rank.add_argument("score_files", nargs="+", help="report.json files to merge")
    p_rank.add_argument(
        "--delta", type=float, default=0.0, help="equivalence tolerance on relevance"
    )
    p_rank.add_argument("--output-dir", default=None, help="where to write ranking.json")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "rank":
            return cmd_rank(args.score_files, args.delta, args.output_dir)
        cfg = load_run_config(
            args.config, seed_override=args.seed, output_dir_override=args.output_dir
        )
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "score":
            return cmd_score(cfg, model_path=args.model)
        return cmd_perturb(cfg, args.perturbations, model_path=args.model)
    except (ConfigError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MetricFailure, EmptyCorpusError, UnprojectableDocumentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_METRIC


if __name__ == "__main__":
    sys.exit(main())
