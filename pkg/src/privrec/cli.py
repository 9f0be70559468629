"""Command-line entry point.

Subcommands: gen-data, train-rank, train-recall, eval, serve-sim.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import pipeline, serving
from .checkpoint import load_checkpoint, save_checkpoint
from .config import describe_config, load_config
from .dataset import ParseError, generate_synthetic, write_synthetic
from .metrics import report_to_csv_row
from .recall import bank_from_params


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(
        prog="privrec",
        description="Privacy-preserving two-stage news recommendation simulator.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys and defaults:\n" + describe_config(),
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--preset", default="desk", help="desk (default) or paper")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--force", action="store_true", help="overwrite outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="write a synthetic MIND-format dataset")

    for name in ("train-rank", "train-recall"):
        p = sub.add_parser(name, help=f"federated training ({name.split('-')[1]})")
        p.add_argument("--data", help="dataset directory (news.tsv + behaviors.tsv)")
        p.add_argument("--rounds", type=int, help="override federated.rounds")
        if name == "train-recall":
            p.add_argument(
                "--ranking-checkpoint", required=True,
                help="checkpoint providing the frozen news encoder",
            )

    p = sub.add_parser("eval", help="recall + ranking metrics and privacy report")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--ranking-checkpoint", required=True)
    p.add_argument("--recall-checkpoint", required=True)
    p.add_argument("--baseline", action="store_true",
                   help="also report the mean-pooling single-vector recall")

    p = sub.add_parser("serve-sim", help="simulate serving sessions and audit them")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--ranking-checkpoint", required=True)
    p.add_argument("--recall-checkpoint", required=True)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--users", type=int, help="limit the number of simulated users")
    return parser


def _ensure_out(args):
    if os.path.exists(args.out) and os.listdir(args.out) and not args.force:
        raise UsageError(f"output directory '{args.out}' exists; use --force")
    os.makedirs(args.out, exist_ok=True)


def _echo_config(cfg, args):
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)


def _load_corpus(cfg, data_dir):
    if data_dir:
        truth_path = os.path.join(data_dir, "ground_truth.json")
        boundary = cfg.data.eval_boundary
        truth = None
        if os.path.exists(truth_path):
            with open(truth_path, encoding="utf-8") as f:
                truth = json.load(f)
            if boundary is None:
                boundary = truth["eval_boundary"]
        if boundary is None:
            raise UsageError("no eval boundary: set data.eval_boundary in config")
        corpus = pipeline.corpus_from_tsv(
            os.path.join(data_dir, "news.tsv"),
            os.path.join(data_dir, "behaviors.tsv"),
            boundary,
        )
        return corpus, truth
    data = generate_synthetic(cfg.synthetic_spec())
    truth = {
        "news_topics": data.news_topics,
        "user_topics": data.user_topics,
        "planted_threshold": data.planted_threshold,
    }
    return pipeline.corpus_from_synthetic(data), truth


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def cmd_gen_data(cfg, args):
    _ensure_out(args)
    data = generate_synthetic(cfg.synthetic_spec())
    write_synthetic(data, args.out)
    _echo_config(cfg, args)
    print(
        f"wrote {len(data.news)} news, "
        f"{len(data.train_impressions) + len(data.eval_impressions)} impressions "
        f"to {args.out}"
    )
    return 0


def cmd_train_rank(cfg, args):
    _ensure_out(args)
    corpus, _ = _load_corpus(cfg, args.data)
    fed_cfg = cfg.fed_config()
    if args.rounds is not None:
        fed_cfg.max_rounds = args.rounds
    rng = np.random.default_rng(cfg.seed)
    result = pipeline.train_ranking(
        corpus, cfg.ranking_config(), fed_cfg, rng,
        log_path=os.path.join(args.out, "rank_rounds.jsonl"),
        dropout=cfg.model.dropout,
    )
    save_checkpoint(
        os.path.join(args.out, "ranking.ckpt.json"),
        {"ranking": result.params},
        meta={"vocab_size": len(corpus.vocab), "seed": cfg.seed, "model": "ranking"},
    )
    _echo_config(cfg, args)
    final = result.history[-1]["loss"] if result.history else None
    print(f"ranking training: {len(result.history)} rounds, final loss {final}")
    return 0


def cmd_train_recall(cfg, args):
    _ensure_out(args)
    corpus, _ = _load_corpus(cfg, args.data)
    groups, meta = load_checkpoint(args.ranking_checkpoint)
    if "ranking" not in groups:
        raise UsageError("checkpoint does not contain a 'ranking' parameter group")
    if meta.get("vocab_size") != len(corpus.vocab):
        raise ParseError(
            f"checkpoint vocab size {meta.get('vocab_size')} does not match "
            f"dataset vocab size {len(corpus.vocab)}"
        )
    news_reps = pipeline.compute_news_reps(corpus, groups["ranking"], cfg.ranking_config())
    fed_cfg = cfg.fed_config()
    if args.rounds is not None:
        fed_cfg.max_rounds = args.rounds
    rng = np.random.default_rng(cfg.seed)
    result = pipeline.train_recall(
        corpus, cfg.recall_config(), fed_cfg, news_reps, rng,
        log_path=os.path.join(args.out, "recall_rounds.jsonl"),
        dropout=cfg.model.dropout,
    )
    save_checkpoint(
        os.path.join(args.out, "recall.ckpt.json"),
        {"recall": result.params},
        meta={"seed": cfg.seed, "model": "recall"},
    )
    _echo_config(cfg, args)
    final = result.history[-1]["loss"] if result.history else None
    print(f"recall training: {len(result.history)} rounds, final loss {final}")
    return 0


def _load_models(cfg, args, corpus):
    rank_groups, rank_meta = load_checkpoint(args.ranking_checkpoint)
    recall_groups, _ = load_checkpoint(args.recall_checkpoint)
    if rank_meta.get("vocab_size") != len(corpus.vocab):
        raise ParseError("ranking checkpoint vocab size does not match dataset")
    ranking_params = rank_groups["ranking"]
    recall_params = recall_groups["recall"]
    if recall_params["bie.keys"].shape[1] != cfg.model.dim:
        raise ParseError("recall checkpoint dimension does not match config")
    return ranking_params, recall_params


def cmd_eval(cfg, args):
    _ensure_out(args)
    corpus, _ = _load_corpus(cfg, args.data)
    ranking_params, recall_params = _load_models(cfg, args, corpus)
    news_reps = pipeline.compute_news_reps(corpus, ranking_params, cfg.ranking_config())
    pool = news_reps.shape[0]
    total = min(cfg.eval.recall_total, pool)
    k_list = sorted({min(k, total) for k in cfg.eval.k_list})
    report, recalled = pipeline.evaluate_recall(
        corpus, recall_params, cfg.recall_config(), news_reps, total, k_list,
        cfg.seed, exclude_history=cfg.eval.exclude_history,
    )
    ranking_report = pipeline.evaluate_ranking_over_recall(
        corpus, ranking_params, cfg.ranking_config(), news_reps, recalled
    )
    report.update(ranking_report)
    report.update(pipeline.budget_report(cfg.fed_config(), cfg.recall_config()))
    if args.baseline:
        base, _ = pipeline.evaluate_recall(
            corpus, recall_params, cfg.recall_config(), news_reps, total, k_list,
            cfg.seed, baseline=True, exclude_history=cfg.eval.exclude_history,
        )
        for k in k_list:
            report[f"baseline_recall@{k}"] = base[f"recall@{k}"]
            report[f"baseline_history_recall@{k}"] = base[f"history_recall@{k}"]
    _write_json(os.path.join(args.out, "metrics.json"), report)
    with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8") as f:
        f.write(report_to_csv_row(report))
    _echo_config(cfg, args)
    for key in sorted(report):
        print(f"{key}: {report[key]}")
    return 0


def cmd_serve_sim(cfg, args):
    _ensure_out(args)
    corpus, truth = _load_corpus(cfg, args.data)
    if truth is None or "news_topics" not in truth:
        raise UsageError("serve-sim needs ground_truth.json for the click model")
    ranking_params, recall_params = _load_models(cfg, args, corpus)
    news_reps = pipeline.compute_news_reps(corpus, ranking_params, cfg.ranking_config())
    pool = serving.NewsPool(
        news_ids=corpus.news_ids, titles=corpus.titles, reps=news_reps
    )
    user_ids = sorted(uid for uid in corpus.histories if corpus.histories[uid])
    if args.users:
        user_ids = user_ids[: args.users]
    stores = {}
    for uid in user_ids:
        store = serving.ClientStore(history=list(corpus.histories[uid]))
        for nid in store.history:
            store.news_titles[nid] = corpus.articles[nid].tokens
        stores[uid] = store
    click_model = serving.topic_click_model(
        truth["user_topics"], truth["news_topics"], cfg.data.p_click
    )
    total = min(cfg.eval.recall_total, news_reps.shape[0])
    trace = serving.simulate_sessions(
        stores, pool, recall_params, cfg.recall_config(), ranking_params,
        cfg.ranking_config(), args.rounds, total, cfg.eval.display,
        click_model, cfg.seed,
    )
    serving.write_trace(trace, os.path.join(args.out, "trace.jsonl"))
    audit = serving.audit_trace(trace)
    _write_json(os.path.join(args.out, "audit.json"), audit)
    _echo_config(cfg, args)
    print(f"simulated {len(trace)} sessions; audit: {audit}")
    return 0 if audit["leaks"] == 0 else 3


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-rank": cmd_train_rank,
    "train-recall": cmd_train_recall,
    "eval": cmd_eval,
    "serve-sim": cmd_serve_sim,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, preset=args.preset, overrides=overrides)
        return COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ParseError, FileNotFoundError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
