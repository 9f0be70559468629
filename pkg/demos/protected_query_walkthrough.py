"""Walk one user's click history through the protected recall pipeline.

Shows each stage: contextual self-attention, interest clustering, per-channel
decomposition onto the shared interest bank, clip + Laplace perturbation,
softmax re-aggregation, quota allocation and the final candidate merge.

Run: python3 demos/protected_query_walkthrough.py
"""

import numpy as np

from privrec.dataset import SyntheticSpec, generate_synthetic
from privrec.pipeline import compute_news_reps, corpus_from_synthetic
from privrec.ranking import RankingConfig, init_ranking_params
from privrec.recall import (
    RecallConfig,
    aggregate_interest,
    bank_from_params,
    build_protected_query,
    decompose_interest,
    encode_interest_channels,
    init_recall_params,
    perturb_scores,
    recall_from_query,
)

rng = np.random.default_rng(0)

print("== setup: synthetic corpus and untrained encoders ==")
data = generate_synthetic(SyntheticSpec(
    n_users=20, n_news=80, n_topics=4, topics_per_user=2,
    clicks_per_user=15, impression_size=8, seed=0, dim=8,
))
corpus = corpus_from_synthetic(data)
rank_cfg = RankingConfig(word_dim=8, dim=8, heads=2, head_dim=4, att_hidden=8)
rank_params = init_ranking_params(rank_cfg, len(corpus.vocab), rng)
news_reps = compute_news_reps(corpus, rank_params, rank_cfg)

cfg = RecallConfig(dim=8, heads=2, head_dim=4, att_hidden=8, n_bie=4,
                   cluster_threshold=1.0)
params = init_recall_params(cfg, rng)
bank = bank_from_params(params)

uid = sorted(corpus.histories)[0]
history = corpus.histories[uid]
hist_idx = [corpus.index[nid] for nid in history]
print(f"user {uid}: {len(history)} clicked news across topics "
      f"{data.user_topics[uid]}")

print("\n== 1. interest channels (self-attention + clustering + pooling) ==")
channels = encode_interest_channels(news_reps[hist_idx], params, cfg)
print(f"{channels.assignment.n_clusters} channels, sizes {channels.cluster_sizes}")
print("channel representations:\n", np.round(channels.reps, 3))

print("\n== 2. decompose onto the shared interest bank ==")
raw = decompose_interest(channels.reps[0], bank)
print("raw scores for channel 0:", np.round(raw, 3))

print("\n== 3. clip to [-delta, delta] and add Laplace noise ==")
perturbed = perturb_scores(raw, cfg.ldp, rng)
print(f"delta={cfg.ldp.delta}, lambda={cfg.ldp.lambda_i}")
print("perturbed scores:      ", np.round(perturbed, 3))

print("\n== 4. softmax re-aggregation ==")
r_hat, alpha = aggregate_interest(perturbed, bank)
print("alpha (what the server may see):", np.round(alpha, 3))
print("reconstructed channel rep:      ", np.round(r_hat, 3))

print("\n== 5. protected query with cluster-proportional quotas ==")
query = build_protected_query(news_reps[hist_idx], params, cfg, 20, rng)
print("quotas:", query.quotas, "ratios:", [round(r, 3) for r in query.ratios])
print("alpha matrix shape:", query.alpha.shape)

print("\n== 6. server-side retrieval ==")
candidates = recall_from_query(query, bank, news_reps, 20)
print(f"{len(candidates)} candidates:",
      [corpus.news_ids[i] for i in candidates[:10]], "...")
print("\nnote: the server only ever saw alpha and quotas, never the history.")
