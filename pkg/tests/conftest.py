"""Shared fixtures: a small synthetic corpus and matching model configs."""

import numpy as np
import pytest

from privrec.dataset import SyntheticSpec, generate_synthetic
from privrec.pipeline import compute_news_reps, corpus_from_synthetic
from privrec.ranking import RankingConfig, init_ranking_params
from privrec.recall import LdpConfig, RecallConfig, init_recall_params

SMALL_SPEC = SyntheticSpec(
    n_users=12, n_news=40, n_topics=4, topics_per_user=2,
    clicks_per_user=15, impression_size=8, seed=0, dim=8,
)


def small_ranking_config(**kw):
    base = dict(word_dim=8, dim=8, heads=2, head_dim=4, att_hidden=8)
    base.update(kw)
    return RankingConfig(**base)


def small_recall_config(**kw):
    base = dict(
        dim=8, heads=2, head_dim=4, att_hidden=8, n_bie=4,
        cluster_threshold=1.0, ldp=LdpConfig(delta=0.2, lambda_i=1.2),
    )
    base.update(kw)
    return RecallConfig(**base)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_corpus(small_data):
    return corpus_from_synthetic(small_data)


@pytest.fixture(scope="session")
def small_ranking(small_corpus):
    """(config, trained-free params) for the small corpus."""
    cfg = small_ranking_config()
    params = init_ranking_params(cfg, len(small_corpus.vocab), np.random.default_rng(1))
    return cfg, params


@pytest.fixture(scope="session")
def small_news_reps(small_corpus, small_ranking):
    cfg, params = small_ranking
    return compute_news_reps(small_corpus, params, cfg)


@pytest.fixture(scope="session")
def small_recall(small_news_reps):
    cfg = small_recall_config()
    params = init_recall_params(cfg, np.random.default_rng(2))
    return cfg, params
