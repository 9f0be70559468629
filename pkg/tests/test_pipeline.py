"""Corpus assembly, client construction and evaluation plumbing."""

import numpy as np
import pytest

from privrec.federated import FedConfig
from privrec.pipeline import (
    RecallFedModel,
    budget_report,
    evaluate_ranking_over_recall,
    evaluate_recall,
    mean_pool_candidates_for_user,
    ranking_clients,
    recall_clients,
    train_ranking,
    train_recall,
    with_noise,
)
from conftest import small_ranking_config, small_recall_config


def test_corpus_indexing(small_corpus):
    for i, nid in enumerate(small_corpus.news_ids):
        assert small_corpus.index[nid] == i
    assert len(small_corpus.titles) == len(small_corpus.news_ids)
    assert set(small_corpus.train_by_user) <= set(small_corpus.histories)


def test_ranking_clients_have_usable_impressions(small_corpus):
    clients = ranking_clients(small_corpus, 4)
    assert clients
    for c in clients:
        assert c.history_titles
        for imp in c.impressions:
            assert any(l == 1 for _, l in imp)
            assert sum(l == 0 for _, l in imp) >= 4


def test_recall_clients_use_dense_indices(small_corpus):
    clients = recall_clients(small_corpus, 4)
    assert clients
    n = len(small_corpus.news_ids)
    for c in clients:
        assert all(0 <= i < n for i in c.history)


def test_mean_pool_baseline(small_news_reps):
    hist = [0, 1, 2]
    out = mean_pool_candidates_for_user(hist, small_news_reps, 10)
    assert len(out) == 10
    user_vec = small_news_reps[hist].mean(axis=0)
    want = list(np.argsort(-(small_news_reps @ user_vec), kind="stable")[:10])
    assert out == [int(i) for i in want]


def test_evaluate_recall_repeatable(small_corpus, small_news_reps, small_recall):
    cfg, params = small_recall
    report, recalled = evaluate_recall(
        small_corpus, params, cfg, small_news_reps, 20, [10, 20], seed=0
    )
    report2, _ = evaluate_recall(
        small_corpus, params, cfg, small_news_reps, 20, [10, 20], seed=0
    )
    assert report == report2
    assert report["n_users"] == len(recalled)
    assert 0.0 <= report["recall@10"] <= report["recall@20"] <= 100.0
    assert all(len(c) == 20 for c in recalled)


def test_evaluate_recall_exclude_history(small_corpus, small_news_reps, small_recall):
    cfg, params = small_recall
    _, recalled = evaluate_recall(
        small_corpus, params, cfg, small_news_reps, 20, [20], seed=0,
        exclude_history=True,
    )
    users = [
        uid for uid in sorted(small_corpus.eval_by_user)
        if small_corpus.histories.get(uid)
    ]
    for uid, cand in zip(users, recalled):
        hist = {small_corpus.index[n] for n in small_corpus.histories[uid]}
        assert not hist & set(cand)


def test_evaluate_ranking_over_recall(small_corpus, small_news_reps, small_ranking,
                                      small_recall):
    rank_cfg, rank_params = small_ranking
    recall_cfg, recall_params = small_recall
    _, recalled = evaluate_recall(
        small_corpus, recall_params, recall_cfg, small_news_reps, 20, [20], seed=0
    )
    report = evaluate_ranking_over_recall(
        small_corpus, rank_params, rank_cfg, small_news_reps, recalled
    )
    assert "mrr" in report
    if "auc" in report:
        assert 0.0 <= report["auc"] <= 1.0


def test_budget_report_and_with_noise(small_recall):
    cfg, _ = small_recall
    fed = FedConfig(clip_scale=0.1, noise=0.01)
    report = budget_report(fed, cfg)
    assert report == {"epsilon_gradient": 20.0, "epsilon_interest": 1.0 / 3.0}
    quiet = with_noise(cfg, 0.0)
    assert quiet.ldp.lambda_i == 0.0
    assert quiet.ldp.delta == cfg.ldp.delta
    assert cfg.ldp.lambda_i == 1.2  # original untouched


def test_train_ranking_with_minibatching(small_corpus):
    cfg = small_ranking_config()
    fed = FedConfig(sample_ratio=0.5, noise=0.0, learning_rate=0.1,
                    max_rounds=2, seed=0)
    result = train_ranking(
        small_corpus, cfg, fed, np.random.default_rng(0), max_impressions=2
    )
    assert len(result.history) == 2
    assert all(np.isfinite(h["loss"]) for h in result.history)


def test_train_recall_prefix_freezing(small_corpus, small_news_reps):
    cfg = small_recall_config(noise_in_training=False)
    fed = FedConfig(sample_ratio=0.5, noise=0.0, learning_rate=0.5,
                    max_rounds=2, seed=0)
    rng = np.random.default_rng(0)
    result = train_recall(
        small_corpus, cfg, fed, small_news_reps, rng, train_prefixes=("bie.",)
    )
    from privrec.recall import init_recall_params

    start = init_recall_params(cfg, np.random.default_rng(0))
    for name in start:
        moved = not np.array_equal(result.params[name], start[name])
        if name.startswith("bie."):
            assert moved, f"{name} should have trained"
        else:
            assert not moved, f"{name} should be frozen"


def test_zero_rounds_returns_init(small_corpus, small_news_reps):
    cfg = small_recall_config()
    fed = FedConfig(sample_ratio=0.5, max_rounds=0, seed=0)
    result = train_recall(small_corpus, cfg, fed, small_news_reps,
                          np.random.default_rng(0))
    assert result.history == []
