"""End-to-end wiring: corpora, federated model adapters and evaluation runs.

This is the layer the CLI and the experiment scripts sit on. The ranking
model trains first; its news encoder then provides frozen news
representations for recall training and retrieval.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import dataset as ds
from .federated import FedConfig, privacy_budget, train
from .metrics import impression_metrics, privacy_recall_rate, recall_at_k
from .params import ParamSet
from .ranking import (
    RankingConfig,
    Vocab,
    build_ranking_batch,
    encode_news,
    encode_user,
    init_ranking_params,
    rank_candidates,
    ranking_loss_nodes,
    tokenize,
)
from .recall import (
    RecallConfig,
    bank_from_params,
    build_recall_batch,
    build_protected_query,
    init_recall_params,
    recall_channel,
    recall_from_query,
    recall_loss_nodes,
)


@dataclass
class Corpus:
    """Parsed dataset, indexed both by news id and by dense news index."""

    articles: dict  # news_id -> NewsArticle
    vocab: Vocab
    news_ids: list  # dense index -> news_id
    histories: dict  # user_id -> list of news_id
    train_by_user: dict  # user_id -> list of Impression
    eval_by_user: dict
    index: dict = field(default_factory=dict)  # news_id -> dense index

    def __post_init__(self):
        if not self.index:
            self.index = {nid: i for i, nid in enumerate(self.news_ids)}

    @property
    def titles(self):
        return [self.articles[nid].tokens for nid in self.news_ids]

    def user_ids(self):
        return sorted(set(self.train_by_user) | set(self.histories))


def _group_by_user(impressions):
    out = {}
    for imp in impressions:
        out.setdefault(imp.user_id, []).append(imp)
    return out


def corpus_from_synthetic(data: ds.SyntheticData) -> Corpus:
    vocab = Vocab()
    articles = {}
    for a in data.news:
        tokens = [vocab.add(t) for t in tokenize(a.title)[: ds.MAX_TITLE]]
        articles[a.news_id] = ds.NewsArticle(a.news_id, a.title, tokens)
    return Corpus(
        articles=articles,
        vocab=vocab,
        news_ids=[a.news_id for a in data.news],
        histories=dict(data.histories),
        train_by_user=_group_by_user(data.train_impressions),
        eval_by_user=_group_by_user(data.eval_impressions),
    )


def corpus_from_tsv(news_path, behaviors_path, eval_boundary):
    with open(news_path, encoding="utf-8") as f:
        articles, vocab = ds.parse_news(f)
    with open(behaviors_path, encoding="utf-8") as f:
        impressions, histories, _ = ds.parse_behaviors(f)
    train, evals = ds.split_by_time(impressions, eval_boundary)
    return Corpus(
        articles=articles,
        vocab=vocab,
        news_ids=sorted(articles),
        histories=histories,
        train_by_user=_group_by_user(train),
        eval_by_user=_group_by_user(evals),
    )


# -- federated model adapters ---------------------------------------------------


@dataclass
class RankingClient:
    user_id: str
    history_titles: list  # token-id lists
    impressions: list  # list of [(title_tokens, label)]


class RankingFedModel:
    """Adapter giving the federated loop a ranking-loss view of one client.

    With max_impressions set, each round draws that many impressions from the
    client log instead of using all of them (per-round minibatching).
    """

    def __init__(self, params: ParamSet, cfg: RankingConfig, dropout=0.0,
                 max_impressions=None):
        self.params = params
        self.cfg = cfg
        self.dropout = dropout
        self.max_impressions = max_impressions

    def client_loss(self, client: RankingClient, param_nodes, rng):
        impressions = client.impressions
        if self.max_impressions and len(impressions) > self.max_impressions:
            pick = rng.choice(len(impressions), size=self.max_impressions, replace=False)
            impressions = [impressions[i] for i in pick]
        batch, _ = build_ranking_batch(
            client.history_titles, impressions, self.cfg.k_neg, rng
        )
        loss = ranking_loss_nodes(
            batch, param_nodes, self.cfg, dropout=self.dropout, rng=rng
        )
        weight = sum(len(s.positives) for s in batch)
        return loss, weight


@dataclass
class RecallClient:
    user_id: str
    history: list  # dense news indices
    impressions: list  # list of [(dense news index, label)]


class RecallFedModel:
    """Recall-loss adapter; news representations stay frozen during training.

    `train_prefixes` restricts the round update to parameters whose name
    starts with one of the prefixes; the rest are treated as constants and
    receive zero gradient (e.g. ("bie.",) trains only the interest bank).
    """

    def __init__(self, params: ParamSet, cfg: RecallConfig, news_reps, dropout=0.0,
                 train_prefixes=None):
        self.params = params
        self.cfg = cfg
        self.news_reps = np.asarray(news_reps, dtype=np.float64)
        self.dropout = dropout
        self.train_prefixes = tuple(train_prefixes) if train_prefixes else None

    def client_loss(self, client: RecallClient, param_nodes, rng):
        if self.train_prefixes:
            param_nodes = {
                name: (node if name.startswith(self.train_prefixes)
                       else ad.as_node(node.value))
                for name, node in param_nodes.items()
            }
        sample = build_recall_batch(client.history, client.impressions, self.cfg.k_neg, rng)
        noise_rng = rng if self.cfg.noise_in_training else None
        loss = recall_loss_nodes(
            [sample], param_nodes, self.news_reps, self.cfg,
            noise_rng=noise_rng, dropout=self.dropout, dropout_rng=rng,
        )
        return loss, len(sample.positives)


def ranking_clients(corpus: Corpus, k_neg):
    """Clients with at least one usable training impression."""
    clients = []
    for uid in sorted(corpus.train_by_user):
        history = corpus.histories.get(uid, [])
        if not history:
            continue
        imps = []
        for imp in corpus.train_by_user[uid]:
            displayed = [
                (corpus.articles[nid].tokens, label) for nid, label in imp.displayed
            ]
            if any(l == 1 for _, l in displayed) and sum(l == 0 for _, l in displayed) >= k_neg:
                imps.append(displayed)
        if imps:
            clients.append(
                RankingClient(
                    user_id=uid,
                    history_titles=[corpus.articles[nid].tokens for nid in history],
                    impressions=imps,
                )
            )
    return clients


def recall_clients(corpus: Corpus, k_neg):
    clients = []
    for uid in sorted(corpus.train_by_user):
        history = corpus.histories.get(uid, [])
        if not history:
            continue
        imps = []
        n_pos = 0
        n_neg = 0
        for imp in corpus.train_by_user[uid]:
            displayed = [(corpus.index[nid], label) for nid, label in imp.displayed]
            imps.append(displayed)
            n_pos += sum(l == 1 for _, l in displayed)
            n_neg += sum(l == 0 for _, l in displayed)
        if n_pos >= 1 and n_neg >= k_neg:
            clients.append(
                RecallClient(
                    user_id=uid,
                    history=[corpus.index[nid] for nid in history],
                    impressions=imps,
                )
            )
    return clients


# -- training entry points --------------------------------------------------------


def compute_news_reps(corpus: Corpus, ranking_params, ranking_cfg):
    """Frozen news representation matrix in dense-index order."""
    return np.stack(
        [encode_news(t, ranking_params, ranking_cfg) for t in corpus.titles]
    )


def train_ranking(corpus, ranking_cfg: RankingConfig, fed_cfg: FedConfig, rng,
                  log_path=None, progress=None, dropout=0.0, max_impressions=None):
    params = init_ranking_params(ranking_cfg, len(corpus.vocab), rng)
    model = RankingFedModel(params, ranking_cfg, dropout=dropout,
                            max_impressions=max_impressions)
    clients = ranking_clients(corpus, ranking_cfg.k_neg)
    if fed_cfg.max_rounds == 0:
        from .federated import TrainResult

        return TrainResult(params=params.copy(), history=[])
    return train(model, clients, fed_cfg, log_path=log_path, progress=progress)


def train_recall(corpus, recall_cfg: RecallConfig, fed_cfg: FedConfig, news_reps,
                 rng, log_path=None, progress=None, dropout=0.0, params=None,
                 train_prefixes=None):
    if params is None:
        params = init_recall_params(recall_cfg, rng)
    model = RecallFedModel(params, recall_cfg, news_reps, dropout=dropout,
                           train_prefixes=train_prefixes)
    clients = recall_clients(corpus, recall_cfg.k_neg)
    if fed_cfg.max_rounds == 0:
        from .federated import TrainResult

        return TrainResult(params=params.copy(), history=[])
    return train(model, clients, fed_cfg, log_path=log_path, progress=progress)


# -- evaluation --------------------------------------------------------------------


def recall_candidates_for_user(history_idx, recall_params, recall_cfg, news_reps,
                               total, rng, exclude_history=False):
    """Full protected pipeline for one user; returns dense candidate indices."""
    query = build_protected_query(
        news_reps[history_idx], recall_params, recall_cfg, total, rng
    )
    bank = bank_from_params(recall_params)
    exclude = set(history_idx) if exclude_history else ()
    return recall_from_query(query, bank, news_reps, total, exclude)


def mean_pool_candidates_for_user(history_idx, news_reps, total, exclude_history=False):
    """Single-vector baseline: average clicked reps, one retrieval channel."""
    user_vec = news_reps[history_idx].mean(axis=0)
    exclude = set(history_idx) if exclude_history else ()
    return recall_channel(user_vec, news_reps, total, exclude)


def evaluate_recall(corpus, recall_params, recall_cfg, news_reps, total, k_list,
                    seed, baseline=False, exclude_history=False):
    """Future-click R@K and historical-click recall over all eval users.

    Returns a flat report dict. With baseline=True the mean-pooling
    single-vector retrieval is used instead of the protected pipeline.
    """
    rng = np.random.default_rng([seed, 0xE7A1])
    future_sets, history_sets, recalled = [], [], []
    for uid in sorted(corpus.eval_by_user):
        history = corpus.histories.get(uid, [])
        if not history:
            continue
        future = [
            nid
            for imp in corpus.eval_by_user[uid]
            for nid, label in imp.displayed
            if label == 1
        ]
        if not future:
            continue
        hist_idx = [corpus.index[nid] for nid in history]
        if baseline:
            cand = mean_pool_candidates_for_user(
                hist_idx, news_reps, total, exclude_history
            )
        else:
            cand = recall_candidates_for_user(
                hist_idx, recall_params, recall_cfg, news_reps, total, rng,
                exclude_history,
            )
        future_sets.append({corpus.index[nid] for nid in future})
        history_sets.append(set(hist_idx))
        recalled.append(cand)
    report = {"n_users": len(recalled)}
    for k in k_list:
        value, _ = recall_at_k(future_sets, recalled, k)
        report[f"recall@{k}"] = value
        pvalue, _ = privacy_recall_rate(history_sets, recalled, k)
        report[f"history_recall@{k}"] = pvalue
    return report, recalled


def evaluate_ranking_over_recall(corpus, ranking_params, ranking_cfg, news_reps,
                                 recalled_by_user):
    """AUC / MRR / nDCG of the ranking model over each user's recalled set,
    with future clicks as positives."""
    impressions = []
    users = [
        uid
        for uid in sorted(corpus.eval_by_user)
        if corpus.histories.get(uid) and any(
            label == 1
            for imp in corpus.eval_by_user[uid]
            for _, label in imp.displayed
        )
    ]
    for uid, cand in zip(users, recalled_by_user):
        history = corpus.histories[uid]
        hist_reps = news_reps[[corpus.index[nid] for nid in history]]
        user_vec = encode_user(hist_reps, ranking_params, ranking_cfg)
        future = {
            corpus.index[nid]
            for imp in corpus.eval_by_user[uid]
            for nid, label in imp.displayed
            if label == 1
        }
        scores = news_reps[cand] @ user_vec
        labels = [1 if idx in future else 0 for idx in cand]
        impressions.append((scores, labels))
    report, excluded = impression_metrics(impressions)
    report["excluded_single_class"] = excluded["single_class"]
    report["excluded_no_positive"] = excluded["no_positive"]
    return report


def budget_report(fed_cfg: FedConfig, recall_cfg: RecallConfig):
    return privacy_budget(
        fed_cfg.clip_scale, fed_cfg.noise, recall_cfg.ldp.delta, recall_cfg.ldp.lambda_i
    )


def with_noise(recall_cfg: RecallConfig, lambda_i):
    """Copy of the config with a different interest-noise intensity."""
    return replace(recall_cfg, ldp=replace(recall_cfg.ldp, lambda_i=lambda_i))
