"""MIND-format log ingestion and a seeded synthetic dataset generator.

behaviors.tsv rows: impression_id, user_id, time, space-separated clicked-news
history, space-separated "newsid-label" impression tokens. news.tsv rows:
news_id, category, subcategory, title, ... (only id and title are used).

The synthetic generator plants multi-topic user interests: news vectors are
drawn around topic centroids, titles from topic-specific vocabularies, and
each user clicks news from a fixed set of personal topics. Ground truth
(topics, vectors) is kept for diagnostics only and never feeds the models.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .ranking import Vocab, tokenize

MAX_HISTORY = 50
MAX_TITLE = 30


@dataclass
class NewsArticle:
    news_id: str
    title: str
    tokens: list  # token ids, <= MAX_TITLE


@dataclass
class Impression:
    impression_id: str
    user_id: str
    timestamp: int
    displayed: list  # list of (news_id, label in {0, 1})


class ParseError(ValueError):
    pass


# -- MIND format --------------------------------------------------------------


def parse_behaviors(lines, max_history=MAX_HISTORY, continue_on_error=False):
    """Parse behaviors.tsv lines.

    Returns (impressions, histories, skipped) where histories maps user_id to
    the most recent `max_history` clicked news ids. With continue_on_error,
    malformed lines are counted instead of raising.
    """
    impressions = []
    histories = {}
    skipped = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        try:
            parts = line.split("\t")
            if len(parts) != 5:
                raise ParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
            imp_id, user_id, time_s, hist_s, disp_s = parts
            displayed = []
            for tok in disp_s.split():
                news_id, sep, label = tok.rpartition("-")
                if not sep or label not in ("0", "1"):
                    raise ParseError(f"line {lineno}: malformed impression token '{tok}'")
                displayed.append((news_id, int(label)))
            if not displayed:
                raise ParseError(f"line {lineno}: impression with no displayed news")
            history = hist_s.split()[-max_history:]
            impressions.append(
                Impression(
                    impression_id=imp_id,
                    user_id=user_id,
                    timestamp=int(time_s),
                    displayed=displayed,
                )
            )
            if user_id not in histories:
                histories[user_id] = history
        except ParseError:
            if not continue_on_error:
                raise
            skipped += 1
    return impressions, histories, skipped


def serialize_behaviors(impressions, histories):
    """Inverse of parse_behaviors (up to history truncation)."""
    lines = []
    for imp in impressions:
        hist = " ".join(histories.get(imp.user_id, []))
        disp = " ".join(f"{nid}-{label}" for nid, label in imp.displayed)
        lines.append(
            f"{imp.impression_id}\t{imp.user_id}\t{imp.timestamp}\t{hist}\t{disp}"
        )
    return lines


def parse_news(lines, vocab=None, build_vocab=False, max_title=MAX_TITLE):
    """Parse news.tsv lines into an id -> NewsArticle table.

    With build_vocab, unseen tokens extend `vocab` in corpus order; otherwise
    unknown tokens map to the shared UNK id.
    """
    if vocab is None:
        vocab = Vocab()
        build_vocab = True
    articles = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            raise ParseError(f"line {lineno}: expected >= 4 fields")
        news_id, title = parts[0], parts[3]
        if news_id in articles:
            raise ParseError(f"line {lineno}: duplicate news id '{news_id}'")
        tokens = tokenize(title)[:max_title]
        if build_vocab:
            ids = [vocab.add(t) for t in tokens]
        else:
            ids = [vocab.lookup(t) for t in tokens]
        articles[news_id] = NewsArticle(news_id=news_id, title=title, tokens=ids)
    return articles, vocab


def split_by_time(impressions, boundary):
    """(train, eval) impression lists split at a timestamp boundary."""
    train = [i for i in impressions if i.timestamp < boundary]
    evals = [i for i in impressions if i.timestamp >= boundary]
    return train, evals


def sample_negatives(displayed, k, rng):
    """k news ids drawn uniformly without replacement from the non-clicked
    displayed items of one impression."""
    negatives = [nid for nid, label in displayed if label == 0]
    if len(negatives) < k:
        raise ValueError(f"impression has {len(negatives)} negatives, need {k}")
    pick = rng.choice(len(negatives), size=k, replace=False)
    return [negatives[i] for i in pick]


# -- synthetic data --------------------------------------------------------------


@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_news: int = 500
    n_topics: int = 8
    topics_per_user: int = 3
    clicks_per_user: int = 20
    impression_size: int = 10
    p_click: float = 0.8
    seed: int = 0
    dim: int = 16
    sigma: float = 0.3
    topic_scale: float = 3.0
    vocab_per_topic: int = 12
    history_clicks: int = 10
    eval_fraction: float = 0.3

    def __post_init__(self):
        if self.topics_per_user > self.n_topics:
            raise ValueError("topics_per_user exceeds n_topics")
        if min(self.n_users, self.n_news, self.n_topics, self.clicks_per_user,
               self.impression_size) < 1:
            raise ValueError("all counts must be >= 1")
        if self.history_clicks >= self.clicks_per_user:
            raise ValueError("history_clicks must be < clicks_per_user")


@dataclass
class SyntheticData:
    news: list  # NewsArticle, with synthetic titles
    news_topics: dict  # news_id -> topic index
    news_vectors: dict  # news_id -> planted vector (diagnostics only)
    user_topics: dict  # user_id -> list of topic indices
    histories: dict  # user_id -> clicked news ids
    train_impressions: list
    eval_impressions: list
    planted_threshold: float
    spec: SyntheticSpec = field(repr=False, default=None)

    @property
    def impressions(self):
        return self.train_impressions + self.eval_impressions

    def eval_clicks(self, user_id):
        """Future (eval-split) clicked news ids of one user."""
        out = []
        for imp in self.eval_impressions:
            if imp.user_id == user_id:
                out.extend(nid for nid, label in imp.displayed if label == 1)
        return out


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Deterministic synthetic dataset with planted topic structure."""
    rng = np.random.default_rng(spec.seed)
    per_topic_news = spec.n_news // spec.n_topics
    if spec.clicks_per_user > spec.topics_per_user * per_topic_news:
        raise ValueError("clicks_per_user exceeds news available in user topics")

    centroids = rng.standard_normal((spec.n_topics, spec.dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    centroids *= spec.topic_scale

    news = []
    news_topics = {}
    news_vectors = {}
    topic_news = {t: [] for t in range(spec.n_topics)}
    for i in range(spec.n_news):
        topic = i % spec.n_topics
        nid = f"N{i:05d}"
        vec = centroids[topic] + spec.sigma * rng.standard_normal(spec.dim)
        length = int(rng.integers(4, 9))
        words = [
            f"t{topic}w{int(rng.integers(spec.vocab_per_topic))}" for _ in range(length)
        ]
        news.append(NewsArticle(news_id=nid, title=" ".join(words), tokens=[]))
        news_topics[nid] = topic
        news_vectors[nid] = vec
        topic_news[topic].append(nid)

    user_topics = {}
    histories = {}
    train_impressions = []
    eval_impressions = []
    all_ids = [a.news_id for a in news]
    ts = 0
    imp_counter = 0
    for u in range(spec.n_users):
        uid = f"U{u:04d}"
        topics = sorted(rng.choice(spec.n_topics, size=spec.topics_per_user, replace=False))
        user_topics[uid] = [int(t) for t in topics]
        candidates = [nid for t in topics for nid in topic_news[t]]
        clicked = [candidates[i] for i in
                   rng.choice(len(candidates), size=spec.clicks_per_user, replace=False)]
        histories[uid] = clicked[: spec.history_clicks][-MAX_HISTORY:]
        later = clicked[spec.history_clicks :]
        clicked_set = set(clicked)
        n_eval = max(1, int(round(spec.eval_fraction * len(later))))
        for j, pos in enumerate(later):
            fillers = []
            while len(fillers) < spec.impression_size - 1:
                cand = all_ids[int(rng.integers(spec.n_news))]
                if cand not in clicked_set and cand not in fillers:
                    fillers.append(cand)
            displayed = [(pos, 1)] + [(f, 0) for f in fillers]
            order = rng.permutation(len(displayed))
            displayed = [displayed[i] for i in order]
            imp = Impression(
                impression_id=f"I{imp_counter:06d}",
                user_id=uid,
                timestamp=0,
                displayed=displayed,
            )
            imp_counter += 1
            if j < len(later) - n_eval:
                train_impressions.append(imp)
            else:
                eval_impressions.append(imp)

    # timestamps: all train impressions precede all eval impressions, so the
    # split is a pure function of a single boundary
    for imp in train_impressions:
        imp.timestamp = ts
        ts += 1
    for imp in eval_impressions:
        imp.timestamp = ts
        ts += 1

    intra = spec.sigma * np.sqrt(2.0 * spec.dim)
    return SyntheticData(
        news=news,
        news_topics=news_topics,
        news_vectors=news_vectors,
        user_topics=user_topics,
        histories=histories,
        train_impressions=train_impressions,
        eval_impressions=eval_impressions,
        planted_threshold=1.5 * intra,
        spec=spec,
    )


# -- synthetic -> MIND-format files ------------------------------------------------


def write_synthetic(data: SyntheticData, out_dir):
    """Write news.tsv / behaviors.tsv plus a ground-truth JSON for diagnostics."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    news_path = os.path.join(out_dir, "news.tsv")
    with open(news_path, "w", encoding="utf-8") as f:
        for a in data.news:
            topic = data.news_topics[a.news_id]
            f.write(f"{a.news_id}\ttopic{topic}\ttopic{topic}\t{a.title}\n")
    behaviors_path = os.path.join(out_dir, "behaviors.tsv")
    with open(behaviors_path, "w", encoding="utf-8") as f:
        for line in serialize_behaviors(data.impressions, data.histories):
            f.write(line + "\n")
    truth = {
        "news_topics": data.news_topics,
        "user_topics": data.user_topics,
        "news_vectors": {k: list(map(float, v)) for k, v in data.news_vectors.items()},
        "planted_threshold": float(data.planted_threshold),
        "eval_boundary": (
            min(i.timestamp for i in data.eval_impressions)
            if data.eval_impressions
            else None
        ),
    }
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as f:
        json.dump(truth, f, indent=1, sort_keys=True)
    return news_path, behaviors_path
