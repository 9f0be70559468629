"""Multi-interest recall pipeline with interest decomposition and LDP noise.

The pipeline per user: self-attention over clicked-news representations,
average-linkage clustering into interest channels, attention pooling per
channel, decomposition of each channel representation onto a shared bank of
key/value interest embeddings, clip + Laplace perturbation of the
decomposition scores, softmax re-aggregation over the value embeddings, and
per-channel top-k retrieval with cluster-proportional quotas.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .clustering import ClusterAssignment, cluster_average_linkage
from .layers import (
    attention_pool_nodes,
    check_matrix,
    init_attention_pool,
    init_self_attention,
    self_attention_nodes,
    sub_params,
)
from .params import ParamSet, uniform_init


@dataclass
class LdpConfig:
    """Clip scale and Laplace intensity for score perturbation."""

    delta: float = 0.2
    lambda_i: float = 1.2

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.lambda_i < 0:
            raise ValueError("lambda_i must be >= 0")


@dataclass
class RecallConfig:
    dim: int = 32
    heads: int = 4
    head_dim: int = 8
    att_hidden: int = 128
    n_bie: int = 8
    cluster_threshold: float = 1.0  # main text value; supplementary used 2
    ldp: LdpConfig = field(default_factory=LdpConfig)
    k_neg: int = 4
    noise_in_training: bool = True
    dropout: float = 0.2
    init_scale: float = 0.1

    def __post_init__(self):
        if self.heads * self.head_dim != self.dim:
            raise ValueError("heads * head_dim must equal dim")


@dataclass
class BieBank:
    """Shared trainable bank of key/value interest embedding pairs."""

    keys: np.ndarray  # (B, d)
    values: np.ndarray  # (B, d)

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.keys.shape != self.values.shape:
            raise ValueError("keys and values must have identical shapes")

    @property
    def n(self):
        return self.keys.shape[0]


@dataclass
class InterestChannels:
    reps: np.ndarray  # (C, d)
    cluster_sizes: list
    assignment: ClusterAssignment


@dataclass
class ProtectedQuery:
    """What a client is allowed to upload: row-stochastic weights plus quotas."""

    alpha: np.ndarray  # (C, B), rows sum to 1
    quotas: list  # C non-negative ints summing to R
    ratios: list  # C floats summing to 1


def init_recall_params(cfg: RecallConfig, rng) -> ParamSet:
    arrays = {}
    arrays.update(
        init_self_attention(rng, cfg.dim, cfg.heads, cfg.head_dim, "selfatt", cfg.init_scale)
    )
    arrays.update(
        init_attention_pool(rng, cfg.dim, cfg.att_hidden, "clusteratt", cfg.init_scale)
    )
    arrays["bie.keys"] = uniform_init(rng, (cfg.n_bie, cfg.dim), cfg.init_scale)
    arrays["bie.values"] = uniform_init(rng, (cfg.n_bie, cfg.dim), cfg.init_scale)
    return ParamSet(arrays)


def bank_from_params(params) -> BieBank:
    return BieBank(keys=ad.value(params["bie.keys"]), values=ad.value(params["bie.values"]))


# -- interest modeling ---------------------------------------------------------


def interest_channel_nodes(clicked_reps, param_nodes, cfg, dropout=0.0, rng=None):
    """Node-level interest channels: (list of rep nodes, sizes, assignment)."""
    H = ad.as_node(clicked_reps)
    n = H.shape[0]
    if n == 0:
        raise ValueError("cold user")
    contextual = self_attention_nodes(
        H, sub_params(param_nodes, "selfatt"), cfg.heads, cfg.head_dim,
        dropout=dropout, rng=rng, residual=True,
    )
    assignment = cluster_average_linkage(contextual.value, cfg.cluster_threshold)
    att = sub_params(param_nodes, "clusteratt")
    reps = []
    for members in assignment.clusters:
        rows = ad.gather_rows(contextual, list(members))
        pooled, _ = attention_pool_nodes(rows, att, dropout=dropout, rng=rng)
        reps.append(pooled)
    return reps, assignment.sizes(), assignment


def encode_interest_channels(clicked_reps, params, cfg: RecallConfig) -> InterestChannels:
    """Interest channels of one user from clicked-news representations."""
    clicked_reps = check_matrix(clicked_reps, "clicked_reps")
    if clicked_reps.shape[0] > 50:
        raise ValueError("history exceeds 50 clicked news")
    nodes = params.as_nodes() if isinstance(params, ParamSet) else params
    reps, sizes, assignment = interest_channel_nodes(clicked_reps, nodes, cfg)
    return InterestChannels(
        reps=np.stack([r.value for r in reps]),
        cluster_sizes=sizes,
        assignment=assignment,
    )


# -- decomposer / perturbation / aggregator ------------------------------------


def decompose_interest(r, bank: BieBank):
    """Raw decomposition scores: dot product of the interest rep with each key."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (bank.keys.shape[1],):
        raise ValueError("interest rep dimension does not match bank keys")
    return bank.keys @ r


def perturb_scores(a, cfg: LdpConfig, rng):
    """Clip scores to [-delta, delta], then add i.i.d. Laplace(0, lambda_i)."""
    a = np.asarray(a, dtype=np.float64)
    clipped = np.clip(a, -cfg.delta, cfg.delta)
    if cfg.lambda_i == 0:
        return clipped
    return clipped + rng.laplace(0.0, cfg.lambda_i, size=a.shape)


def aggregate_interest(a_hat, bank: BieBank):
    """Softmax the perturbed scores and recombine the value embeddings."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    e = np.exp(a_hat - a_hat.max())
    alpha = e / e.sum()
    return alpha @ bank.values, alpha


# -- quota allocation and retrieval ---------------------------------------------


def allocate_quotas(cluster_sizes, total):
    """Cluster-proportional integer quotas via largest remainder.

    Ratios are cluster-size fractions; quotas sum to `total` exactly. Remainder
    ties go to the larger cluster, then the lower channel index.
    """
    sizes = [int(s) for s in cluster_sizes]
    if total < 0:
        raise ValueError("total quota must be >= 0")
    if sum(sizes) < 1:
        raise ValueError("all clusters empty")
    denom = float(sum(sizes))
    ratios = [s / denom for s in sizes]
    raw = [q * total for q in ratios]
    quotas = [int(np.floor(x)) for x in raw]
    shortfall = total - sum(quotas)
    order = sorted(
        range(len(sizes)),
        key=lambda i: (-(raw[i] - quotas[i]), -sizes[i], i),
    )
    for i in order[:shortfall]:
        quotas[i] += 1
    return quotas, ratios


def recall_channel(r_hat, news_reps, k, exclude=()):
    """Exact top-k news indices by inner product, ties to the lower index."""
    news_reps = check_matrix(news_reps, "news_reps")
    exclude = set(exclude)
    available = news_reps.shape[0] - len(exclude)
    if k > available:
        raise ValueError(f"k={k} exceeds {available} available news")
    if k <= 0:
        return []
    scores = news_reps @ np.asarray(r_hat, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    out = []
    for idx in order:
        if idx in exclude:
            continue
        out.append(int(idx))
        if len(out) == k:
            break
    return out


def unified_score(news_rep, channel_reps, ratios):
    """Quota-ratio-weighted sum of per-channel inner-product scores."""
    channel_reps = np.atleast_2d(np.asarray(channel_reps, dtype=np.float64))
    ratios = np.asarray(ratios, dtype=np.float64)
    return float(ratios @ (channel_reps @ np.asarray(news_rep, dtype=np.float64)))


def unified_scores(news_reps, channel_reps, ratios):
    """Vectorized unified score for every row of news_reps."""
    combined = np.asarray(ratios, dtype=np.float64) @ np.atleast_2d(channel_reps)
    return np.asarray(news_reps) @ combined


def merge_channels(channel_lists, scores, total, exclude=()):
    """Integrate per-channel lists into one candidate set.

    Concatenates in channel order, drops duplicates keeping the first
    occurrence, and backfills with the highest-unified-score news not yet
    included (ties to the lower index) up to min(total, available).
    """
    exclude = set(exclude)
    seen = set(exclude)
    merged = []
    for lst in channel_lists:
        for idx in lst:
            if idx not in seen:
                merged.append(int(idx))
                seen.add(idx)
    target = min(total, len(scores) - len(exclude))
    if len(merged) < target:
        order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
        for idx in order:
            if len(merged) >= target:
                break
            if int(idx) not in seen:
                merged.append(int(idx))
                seen.add(int(idx))
    return merged[:target]


# -- end-to-end query and retrieval ----------------------------------------------


def build_protected_query(clicked_reps, params, cfg: RecallConfig, total, rng,
                          with_noise=True) -> ProtectedQuery:
    """Run the client-side pipeline down to uploadable weights and quotas."""
    channels = encode_interest_channels(clicked_reps, params, cfg)
    bank = bank_from_params(params)
    alphas = []
    for rep in channels.reps:
        a = decompose_interest(rep, bank)
        if with_noise:
            a = perturb_scores(a, cfg.ldp, rng)
        else:
            a = np.clip(a, -cfg.ldp.delta, cfg.ldp.delta)
        _, alpha = aggregate_interest(a, bank)
        alphas.append(alpha)
    quotas, ratios = allocate_quotas(channels.cluster_sizes, total)
    return ProtectedQuery(alpha=np.stack(alphas), quotas=quotas, ratios=ratios)


def recall_from_query(query: ProtectedQuery, bank: BieBank, news_reps, total,
                      exclude=()):
    """Server-side retrieval from a protected query; returns candidate indices."""
    reps = query.alpha @ bank.values
    channel_lists = [
        recall_channel(reps[i], news_reps, min(q, news_reps.shape[0] - len(set(exclude))), exclude)
        for i, q in enumerate(query.quotas)
    ]
    scores = unified_scores(news_reps, reps, query.ratios)
    return merge_channels(channel_lists, scores, total, exclude)


# -- training loss -----------------------------------------------------------------


@dataclass
class RecallSample:
    """One user's training view: history indices plus (positive, negatives) pairs."""

    history: list
    positives: list  # list of (pos_index, [neg_index] * k_neg)


def build_recall_batch(history, impressions, k_neg, rng):
    """Assemble a RecallSample, sampling negatives from the user's pooled
    displayed-not-clicked news across all impressions."""
    pool = []
    positives = []
    for displayed in impressions:
        for idx, label in displayed:
            if label == 0:
                pool.append(idx)
            else:
                positives.append(idx)
    samples = []
    for pos in positives:
        if len(pool) < k_neg:
            raise ValueError(
                f"positive {pos}: only {len(pool)} displayed-not-clicked news, "
                f"need {k_neg} negatives"
            )
        negs = list(rng.choice(len(pool), size=k_neg, replace=False))
        samples.append((pos, [pool[i] for i in negs]))
    return RecallSample(history=list(history), positives=samples)


def recall_loss_nodes(batch, param_nodes, news_reps, cfg: RecallConfig,
                      noise_rng=None, dropout=0.0, dropout_rng=None):
    """InfoNCE-style recall loss over a batch of RecallSamples, as a Node.

    Mean over all positives of -log(exp(z+) / (exp(z+) + sum exp(z-))), where
    z is the unified score computed through the full protected pipeline. Noise
    enters as an additive constant so gradients flow through the clip.
    """
    news_reps = np.asarray(news_reps, dtype=np.float64)
    keys = param_nodes["bie.keys"]
    values = param_nodes["bie.values"]
    terms = []
    for sample in batch:
        if not sample.positives:
            continue
        reps, sizes, _ = interest_channel_nodes(
            news_reps[sample.history], param_nodes, cfg,
            dropout=dropout, rng=dropout_rng,
        )
        _, ratios = allocate_quotas(sizes, 0)
        combined = None
        for rep, q in zip(reps, ratios):
            a = ad.clip(keys @ rep, -cfg.ldp.delta, cfg.ldp.delta)
            if noise_rng is not None and cfg.noise_in_training and cfg.ldp.lambda_i > 0:
                a = a + noise_rng.laplace(0.0, cfg.ldp.lambda_i, size=keys.shape[0])
            alpha = ad.softmax(a)
            r_hat = alpha @ values
            combined = r_hat * q if combined is None else combined + r_hat * q
        for pos, negs in sample.positives:
            cand = news_reps[[pos] + list(negs)]
            z = ad.matmul(ad.as_node(cand), combined)
            terms.append(ad.logsumexp(z) - _first(z))
    if not terms:
        raise ValueError("batch contains no positive samples")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / float(len(terms))


def _first(vec):
    n = vec.shape[0]
    sel = np.zeros(n)
    sel[0] = 1.0
    return ad.matmul(vec, sel)


def recall_loss(batch, params: ParamSet, news_reps, cfg: RecallConfig, rng=None):
    """Scalar recall loss on plain arrays."""
    node = recall_loss_nodes(batch, params.as_nodes(), news_reps, cfg, noise_rng=rng)
    return float(node.value)
