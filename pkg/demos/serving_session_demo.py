"""Simulated client/server serving rounds with a privacy audit.

Each round every client uploads a protected recall request, receives
candidates, ranks them locally and clicks according to its hidden topic
interests. The audit then scans every outbound message for history leaks.

Run: python3 demos/serving_session_demo.py
"""

import json

import numpy as np

from privrec import serving
from privrec.dataset import SyntheticSpec, generate_synthetic
from privrec.pipeline import compute_news_reps, corpus_from_synthetic
from privrec.ranking import RankingConfig, init_ranking_params
from privrec.recall import RecallConfig, init_recall_params

data = generate_synthetic(SyntheticSpec(
    n_users=8, n_news=60, n_topics=4, topics_per_user=2,
    clicks_per_user=15, impression_size=8, seed=3, dim=8,
))
corpus = corpus_from_synthetic(data)
rank_cfg = RankingConfig(word_dim=8, dim=8, heads=2, head_dim=4, att_hidden=8)
rank_params = init_ranking_params(rank_cfg, len(corpus.vocab),
                                  np.random.default_rng(0))
news_reps = compute_news_reps(corpus, rank_params, rank_cfg)
recall_cfg = RecallConfig(dim=8, heads=2, head_dim=4, att_hidden=8, n_bie=4,
                          cluster_threshold=1.0)
recall_params = init_recall_params(recall_cfg, np.random.default_rng(1))

pool = serving.NewsPool(news_ids=corpus.news_ids, titles=corpus.titles,
                        reps=news_reps)
stores = {}
for uid in sorted(corpus.histories):
    store = serving.ClientStore(history=list(corpus.histories[uid]))
    for nid in store.history:
        store.news_titles[nid] = corpus.articles[nid].tokens
    stores[uid] = store

click_model = serving.topic_click_model(data.user_topics, data.news_topics, 0.8)
trace = serving.simulate_sessions(
    stores, pool, recall_params, recall_cfg, rank_params, rank_cfg,
    rounds=3, total_quota=20, top=5, click_model=click_model, seed=0,
)
print(f"simulated {len(trace)} sessions over 3 rounds")

record = trace[0]
request = json.loads(record["request"])
print(f"\n== one trace record (user {record['user']}, round {record['round']}) ==")
print("request fields:", sorted(request))
print("quota vector (first 8 of padded 50):", request["quotas"][:8])
print("request bytes:", len(record["request"]))
print("displayed:", record["displayed"])
print("clicked:  ", record["clicked"])
print("history at send (client-local only):", record["history_at_send"][:5], "...")

sizes = {len(t["request"]) for t in trace}
print(f"\ndistinct request sizes across all sessions: {sorted(sizes)}")
print("(constant size: the message length reveals nothing about the history)")

print("\n== privacy audit ==")
print(serving.audit_trace(trace))
