"""Recall and ranking metrics: R@K, AUC, MRR, nDCG@K, historical-click recall.

Impression-level metrics are unweighted means over impressions; R@K is an
unweighted mean over users, reported as a percentage. AUC uses a strict
indicator by default (ties score zero); pass tie_half=True for the
tie-counts-half convention.
"""

import csv
import io
import json

import numpy as np


def recall_at_k(clicked_sets, recalled_lists, k):
    """Mean over users of |clicked ∩ top-k recalled| / |clicked|, in percent.

    Users with empty clicked sets are excluded; returns (value, n_excluded).
    """
    fractions = []
    excluded = 0
    for clicked, recalled in zip(clicked_sets, recalled_lists):
        clicked = set(clicked)
        if not clicked:
            excluded += 1
            continue
        top = set(list(recalled)[:k])
        fractions.append(len(clicked & top) / len(clicked))
    if not fractions:
        raise ValueError("no users with non-empty clicked sets")
    return 100.0 * float(np.mean(fractions)), excluded


def privacy_recall_rate(historical_sets, recalled_lists, k):
    """recall_at_k on historical (not future) clicks. Lower is better privacy."""
    return recall_at_k(historical_sets, recalled_lists, k)


def auc(scores, labels, tie_half=False):
    """Pairwise ranking accuracy of positives over negatives.

    Strict inequality by default; raises on single-class input.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    wins = (pos[:, None] > neg[None, :]).sum()
    if tie_half:
        wins = wins + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins) / (len(pos) * len(neg))


def mrr(scores, labels):
    """Mean reciprocal rank of the positives over the full ranked impression."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if labels.sum() == 0:
        raise ValueError("MRR needs at least one positive")
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranked = labels[order]
    ranks = np.nonzero(ranked == 1)[0] + 1
    return float(np.mean(1.0 / ranks))


def ndcg_at_k(scores, labels, k):
    """nDCG truncated at k, with the ideal DCG over all positives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("nDCG needs at least one positive")
    k = min(k, len(labels))
    order = np.lexsort((np.arange(len(scores)), -scores))
    ranked = labels[order][:k]
    gains = (2.0**ranked - 1) / np.log2(np.arange(2, k + 2))
    ideal = np.sum(1.0 / np.log2(np.arange(2, n_pos + 2)))
    return float(gains.sum() / ideal)


def impression_metrics(impressions, tie_half=False, ndcg_ks=(5, 10)):
    """Averages of AUC / MRR / nDCG@K over (scores, labels) impressions.

    Single-class impressions are excluded from AUC; impressions with no
    positive are excluded everywhere. Returns (report dict, exclusion counts).
    """
    aucs, mrrs = [], []
    ndcgs = {k: [] for k in ndcg_ks}
    excluded = {"no_positive": 0, "single_class": 0}
    for scores, labels in impressions:
        labels = np.asarray(labels, dtype=int)
        if labels.sum() == 0:
            excluded["no_positive"] += 1
            continue
        if labels.sum() == len(labels):
            excluded["single_class"] += 1
        else:
            aucs.append(auc(scores, labels, tie_half=tie_half))
        mrrs.append(mrr(scores, labels))
        for k in ndcg_ks:
            ndcgs[k].append(ndcg_at_k(scores, labels, k))
    report = {}
    if aucs:
        report["auc"] = float(np.mean(aucs))
    if mrrs:
        report["mrr"] = float(np.mean(mrrs))
    for k in ndcg_ks:
        if ndcgs[k]:
            report[f"ndcg@{k}"] = float(np.mean(ndcgs[k]))
    return report, excluded


# -- reporting ------------------------------------------------------------------


def report_to_json(report):
    return json.dumps(report, indent=1, sort_keys=True)


def report_to_csv_row(report):
    """One header line + one value line, keys sorted."""
    keys = sorted(report)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(keys)
    writer.writerow([report[k] for k in keys])
    return buf.getvalue()
