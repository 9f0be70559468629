"""NRMS-style ranking model: news encoder, user encoder, dot-product matching.

The news encoder embeds title tokens, runs multi-head self-attention over the
non-padding tokens and attention-pools them into one vector. The user encoder
applies the same self-attention + pooling stack to clicked-news vectors. The
news encoder also supplies the frozen news representations consumed by the
recall model.
"""

import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import (
    attention_pool_nodes,
    init_attention_pool,
    init_self_attention,
    self_attention_nodes,
    sub_params,
)
from .params import ParamSet, uniform_init

PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text):
    """Lowercase, split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token -> id map. Id 0 is padding, id 1 is the shared UNK."""

    def __init__(self):
        self._ids = {}

    def __len__(self):
        return len(self._ids) + 2

    def add(self, token):
        if token not in self._ids:
            self._ids[token] = len(self._ids) + 2
        return self._ids[token]

    def lookup(self, token):
        return self._ids.get(token, UNK_ID)

    def to_list(self):
        return sorted(self._ids, key=self._ids.get)

    @classmethod
    def from_tokens(cls, token_lists):
        v = cls()
        for tokens in token_lists:
            for t in tokens:
                v.add(t)
        return v


@dataclass
class RankingConfig:
    word_dim: int = 32
    dim: int = 32
    heads: int = 4
    head_dim: int = 8
    att_hidden: int = 128
    k_neg: int = 4
    max_title: int = 30
    dropout: float = 0.2
    init_scale: float = 0.1

    def __post_init__(self):
        if self.heads * self.head_dim != self.dim:
            raise ValueError("heads * head_dim must equal dim")


def init_ranking_params(cfg: RankingConfig, vocab_size, rng) -> ParamSet:
    s = cfg.init_scale
    arrays = {"embedding": uniform_init(rng, (vocab_size, cfg.word_dim), s)}
    arrays.update(
        init_self_attention(rng, cfg.word_dim, cfg.heads, cfg.head_dim, "news.selfatt", s)
    )
    arrays.update(init_attention_pool(rng, cfg.dim, cfg.att_hidden, "news.att", s))
    arrays.update(
        init_self_attention(rng, cfg.dim, cfg.heads, cfg.head_dim, "user.selfatt", s)
    )
    arrays.update(init_attention_pool(rng, cfg.dim, cfg.att_hidden, "user.att", s))
    return ParamSet(arrays)


# -- encoders ------------------------------------------------------------------


def encode_news_nodes(title_ids, param_nodes, cfg, dropout=0.0, rng=None):
    """News vector node from title token ids. Padding tokens are dropped before
    attention, which is exactly equivalent to masking them out."""
    ids = [t for t in title_ids if t != PAD_ID][: cfg.max_title]
    if not ids:
        raise ValueError("empty title after removing padding")
    emb = ad.gather_rows(param_nodes["embedding"], ids)
    ctx = self_attention_nodes(
        emb, sub_params(param_nodes, "news.selfatt"), cfg.heads, cfg.head_dim,
        dropout=dropout, rng=rng,
    )
    pooled, _ = attention_pool_nodes(
        ctx, sub_params(param_nodes, "news.att"), dropout=dropout, rng=rng
    )
    return pooled


def encode_news(title_ids, params, cfg: RankingConfig):
    nodes = params.as_nodes() if isinstance(params, ParamSet) else params
    return encode_news_nodes(title_ids, nodes, cfg).value


def encode_user_nodes(clicked_reps, param_nodes, cfg, dropout=0.0, rng=None):
    reps = ad.as_node(clicked_reps)
    if reps.shape[0] == 0:
        raise ValueError("cold user")
    ctx = self_attention_nodes(
        reps, sub_params(param_nodes, "user.selfatt"), cfg.heads, cfg.head_dim,
        dropout=dropout, rng=rng,
    )
    pooled, _ = attention_pool_nodes(
        ctx, sub_params(param_nodes, "user.att"), dropout=dropout, rng=rng
    )
    return pooled


def encode_user(clicked_reps, params, cfg: RankingConfig):
    clicked_reps = np.asarray(clicked_reps, dtype=np.float64)
    if clicked_reps.ndim != 2:
        raise ValueError("clicked_reps must be 2-D")
    if clicked_reps.shape[0] > 50:
        raise ValueError("history exceeds 50 clicked news")
    nodes = params.as_nodes() if isinstance(params, ParamSet) else params
    return encode_user_nodes(clicked_reps, nodes, cfg).value


def encode_news_table(articles, params, cfg: RankingConfig):
    """Representation matrix for a list of token-id lists (the news pool)."""
    return np.stack([encode_news(t, params, cfg) for t in articles])


def rank_candidates(user_vec, candidate_reps, top):
    """Top `top` candidate indices by dot product, descending, ties to lower index.

    Returns (indices, scores-in-that-order).
    """
    candidate_reps = np.asarray(candidate_reps, dtype=np.float64)
    if top > candidate_reps.shape[0]:
        raise ValueError(f"top={top} exceeds {candidate_reps.shape[0]} candidates")
    scores = candidate_reps @ np.asarray(user_vec, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))[:top]
    return [int(i) for i in order], scores[order]


# -- training loss ----------------------------------------------------------------


@dataclass
class RankingSample:
    """One impression, reduced to history plus per-positive negative draws."""

    history_titles: list  # token-id lists of clicked news
    positives: list  # list of (pos_title_ids, [neg_title_ids] * k_neg)


def build_ranking_batch(history_titles, impressions, k_neg, rng):
    """Per-impression samples with impression-local negatives.

    Impressions lacking k_neg non-clicked items are skipped; the count of
    skipped impressions is returned alongside the samples.
    """
    samples = []
    skipped = 0
    for displayed in impressions:
        pos_titles = [t for t, label in displayed if label == 1]
        neg_titles = [t for t, label in displayed if label == 0]
        if not pos_titles:
            continue
        if len(neg_titles) < k_neg:
            skipped += 1
            continue
        positives = []
        for pt in pos_titles:
            pick = rng.choice(len(neg_titles), size=k_neg, replace=False)
            positives.append((pt, [neg_titles[i] for i in pick]))
        samples.append(RankingSample(history_titles=history_titles, positives=positives))
    return samples, skipped


def ranking_loss_nodes(batch, param_nodes, cfg: RankingConfig,
                       dropout=0.0, rng=None):
    """InfoNCE ranking loss: mean over positives of the negative log softmax
    probability of the clicked item against its sampled negatives."""
    terms = []
    news_cache = {}

    def enc(title_ids):
        key = tuple(title_ids)
        if key not in news_cache:
            news_cache[key] = encode_news_nodes(
                title_ids, param_nodes, cfg, dropout=dropout, rng=rng
            )
        return news_cache[key]

    for sample in batch:
        hist = ad.stack([enc(t) for t in sample.history_titles])
        user = encode_user_nodes(hist, param_nodes, cfg, dropout=dropout, rng=rng)
        for pos, negs in sample.positives:
            cand = ad.stack([enc(pos)] + [enc(n) for n in negs])
            x = ad.matmul(cand, user)
            first = np.zeros(x.shape[0])
            first[0] = 1.0
            terms.append(ad.logsumexp(x) - ad.matmul(x, first))
    if not terms:
        raise ValueError("batch contains no usable impressions")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / float(len(terms))


def ranking_loss(batch, params: ParamSet, cfg: RankingConfig):
    node = ranking_loss_nodes(batch, params.as_nodes(), cfg)
    return float(node.value)
