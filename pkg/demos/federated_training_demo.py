"""Federated training of both models on a small synthetic corpus.

Trains the ranking model first, freezes its news encoder output as the news
representation table, then trains the recall model on top. Prints per-round
losses and the local differential privacy budget of the whole setup.

Run: python3 demos/federated_training_demo.py   (about half a minute)
"""

import numpy as np

from privrec.config import load_config
from privrec.dataset import SyntheticSpec, generate_synthetic
from privrec.federated import FedConfig
from privrec.pipeline import (
    budget_report,
    compute_news_reps,
    corpus_from_synthetic,
    evaluate_recall,
    train_ranking,
    train_recall,
)
from privrec.ranking import RankingConfig
from privrec.recall import LdpConfig, RecallConfig

data = generate_synthetic(SyntheticSpec(
    n_users=40, n_news=80, n_topics=4, topics_per_user=2,
    clicks_per_user=15, impression_size=8, seed=7, dim=8,
))
corpus = corpus_from_synthetic(data)
print(f"corpus: {len(corpus.news_ids)} news, {len(corpus.histories)} users")

rank_cfg = RankingConfig(word_dim=8, dim=8, heads=2, head_dim=4, att_hidden=8)
fed = FedConfig(sample_ratio=0.2, clip_scale=0.1, noise=0.01,
                learning_rate=0.5, max_rounds=20, seed=7)

print("\n== ranking model, 20 federated rounds ==")
rank_result = train_ranking(corpus, rank_cfg, fed, np.random.default_rng(7))
for h in rank_result.history[::5]:
    print(f"round {h['round']:3d}  loss {h['loss']:.4f}  "
          f"clients {h['n_clients']}  grad norm {h['grad_norm_post']:.4f}")

news_reps = compute_news_reps(corpus, rank_result.params, rank_cfg)
print("news representation table:", news_reps.shape)

print("\n== recall model on frozen news representations ==")
recall_cfg = RecallConfig(dim=8, heads=2, head_dim=4, att_hidden=8, n_bie=4,
                          cluster_threshold=1.0,
                          ldp=LdpConfig(delta=0.2, lambda_i=1.2))
recall_result = train_recall(corpus, recall_cfg, fed, news_reps,
                             np.random.default_rng(7))
for h in recall_result.history[::5]:
    print(f"round {h['round']:3d}  loss {h['loss']:.4f}")

print("\n== evaluation ==")
report, _ = evaluate_recall(corpus, recall_result.params, recall_cfg,
                            news_reps, 40, [20, 40], seed=7)
for key in sorted(report):
    print(f"  {key}: {report[key]}")

print("\n== privacy budget (published defaults) ==")
cfg = load_config()
print(budget_report(cfg.fed_config(), cfg.recall_config()))
print("eps_g = 2 * theta / lambda_g, eps_I = 2 * delta / lambda_I")
