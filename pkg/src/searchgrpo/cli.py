"""Command-line drivers.

Exit codes: 0 success, 1 usage / invalid config, 2 data error, 3 transport error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, RunConfig, load_config, make_policy, make_retriever
from .errors import DataError, TransportError
from .grouping import SemanticGroup, export_batch, group_ranker_calls
from .reporting import compare_eval, report_eval, report_ranking_quality, report_turns, to_csv
from .retrieval import build_index, iter_corpus
from .rewards import filter_for_ranker_training, score_trajectories
from .rollout import Mode, dumps_jsonl, iter_questions, read_trajectories, run_batch, write_trajectories

logger = logging.getLogger("searchgrpo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRANSPORT = 0, 1, 2, 3


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_groups(path: str) -> list[SemanticGroup]:
    groups = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    groups.append(SemanticGroup.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: bad group record ({exc!r})") from exc
    return groups


def _rollout(cfg: RunConfig, mode: str):
    if not cfg.questions:
        raise ConfigError("rollout needs 'questions'")
    main = make_policy(cfg.main_policy, "main")
    if main is None:
        raise ConfigError("rollout needs main_policy")
    ranker = make_policy(cfg.ranker_policy, "ranker")
    retriever = make_retriever(cfg)
    questions = list(iter_questions(cfg.questions))
    result = run_batch(questions, main, retriever, Mode(mode), ranker, cfg.G, cfg.limits, cfg.seed,
                       cfg.workers, batch_index=cfg.batch_index)
    for f in result.failures:
        logger.error("rollout %s/r%d failed after %d attempt(s): %s", f.question_id, f.rollout_index,
                     f.attempts, f.error)
    return result


def cmd_ingest(args) -> int:
    index = build_index(iter_corpus(args.corpus))
    stats = {"documents": len(index), "vocabulary": index.vocabulary_size}
    _emit(json.dumps(stats, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = load_config(args.config, mode=args.mode, questions=args.questions)
    result = _rollout(cfg, cfg.mode)
    for t in result.trajectories:
        t.config_hash = cfg.config_hash()
    write_trajectories(args.out, result.trajectories)
    logger.info("wrote %d trajectories to %s (config %s)", len(result.trajectories), args.out, cfg.config_hash())
    return EXIT_TRANSPORT if result.failures else EXIT_OK


def cmd_reward(args) -> int:
    cfg = load_config(args.config)
    trajs = score_trajectories(read_trajectories(args.input), cfg.alpha, cfg.gamma, cfg.cutoffs)
    for t in trajs:
        t.config_hash = cfg.config_hash()
    _, stats = filter_for_ranker_training(trajs)
    logger.info("ranker filter: kept %d trajectories, filtered %d (%d calls)", stats.kept, stats.filtered,
                stats.calls_filtered)
    write_trajectories(args.out, trajs)
    return EXIT_OK


def cmd_group(args) -> int:
    cfg = load_config(args.config)
    groups, stats = group_ranker_calls(read_trajectories(args.input), cfg.delta, cfg.k_min, cfg.cluster_mode,
                                       cfg.alpha, cfg.gamma, cfg.cutoffs)
    h = cfg.config_hash()
    _emit(dumps_jsonl({**g.to_dict(), "config_hash": h} for g in groups), args.out)
    if args.stats:
        Path(args.stats).write_text(json.dumps({**stats.to_dict(), "config_hash": h}, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = load_config(args.config)
    samples = export_batch(_read_groups(args.groups), read_trajectories(args.trajectories), cfg.config_hash(),
                           alpha=cfg.alpha)
    _emit(dumps_jsonl(s.to_dict() for s in samples), args.out)
    if not samples:
        logger.error("export produced no samples")
        return EXIT_DATA
    return EXIT_OK


def cmd_report_turns(args) -> int:
    hist = report_turns(read_trajectories(args.input), args.budget)
    _emit(json.dumps(hist.to_dict(), sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_report_eval(args) -> int:
    rows = report_eval(read_trajectories(args.input))
    if args.compare:
        rows = compare_eval(rows, report_eval(read_trajectories(args.compare)))
    _emit(to_csv(rows), args.out)
    return EXIT_OK


def cmd_report_ranking(args) -> int:
    _emit(to_csv(report_ranking_quality(read_trajectories(args.input), args.k, args.by)), args.out)
    return EXIT_OK


def cmd_gap(args) -> int:
    cfg = load_config(args.config, questions=args.questions)
    runs = {}
    for mode in (Mode.STANDARD, Mode.ORACLE):
        result = _rollout(cfg, mode.value)
        if result.failures:
            return EXIT_TRANSPORT
        runs[mode] = result.trajectories
        if args.keep:
            write_trajectories(Path(args.keep) / f"{mode.value}.jsonl", result.trajectories)
    rows = compare_eval(report_eval(runs[Mode.STANDARD]), report_eval(runs[Mode.ORACLE]))
    _emit(to_csv(rows), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="searchgrpo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a JSONL corpus and print index statistics")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("rollout", help="run G rollouts per question")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", choices=[m.value for m in Mode])
    s.add_argument("--questions")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("reward", help="attach main and ranker rewards to trajectories")
    s.add_argument("--config", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reward)

    s = sub.add_parser("group", help="form semantic GRPO groups of ranker calls")
    s.add_argument("--config", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out")
    s.add_argument("--stats")
    s.set_defaults(func=cmd_group)

    s = sub.add_parser("export", help="write advantage-annotated samples for a trainer")
    s.add_argument("--config", required=True)
    s.add_argument("--trajectories", required=True)
    s.add_argument("--groups", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("report-turns", help="search-turn distribution")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--budget", type=int, default=6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report_turns)

    s = sub.add_parser("report-eval", help="per-dataset F1/EM table (or a gap table with --compare)")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--compare", help="second trajectory file, e.g. an oracle run")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report_eval)

    s = sub.add_parser("report-ranking", help="Hit@k of ranker calls per batch or step")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--by", choices=["batch", "step"], default="batch")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report_ranking)

    s = sub.add_parser("gap", help="run standard and oracle rollouts and diff their F1")
    s.add_argument("--config", required=True)
    s.add_argument("--questions")
    s.add_argument("--keep", help="directory to keep both trajectory files in")
    s.add_argument("--out")
    s.set_defaults(func=cmd_gap)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except TransportError as exc:
        logger.error("transport error: %s", exc)
        return EXIT_TRANSPORT
    except (DataError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
