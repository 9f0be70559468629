"""Average-linkage agglomerative clustering with a distance-threshold stop rule.

Clusters are merged greedily by minimum average pairwise Euclidean distance
until every remaining inter-cluster average distance exceeds the threshold.
Histories are capped at 50 items upstream, so the naive O(n^3) loop is fine.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClusterAssignment:
    """Disjoint index sets covering all input rows, sorted by smallest member."""

    clusters: tuple  # tuple of tuples of row indices, each sorted ascending

    @property
    def n_clusters(self):
        return len(self.clusters)

    def sizes(self):
        return [len(c) for c in self.clusters]

    def labels(self, n):
        """Per-row cluster index array (for purity diagnostics)."""
        out = np.empty(n, dtype=int)
        for ci, members in enumerate(self.clusters):
            out[list(members)] = ci
        return out


def cluster_average_linkage(points, threshold):
    """Cluster the rows of `points`, merging while min average distance <= threshold.

    Ties on merge distance are broken by the pair with the lowest smallest
    member index, then the lowest second-smallest, so results are deterministic
    and invariant to permutation up to relabeling.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if not np.all(np.isfinite(points)):
        raise ValueError("points contain non-finite coordinates")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")

    n = points.shape[0]
    dist = np.sqrt(
        np.maximum(
            0.0,
            (points**2).sum(1)[:, None]
            + (points**2).sum(1)[None, :]
            - 2.0 * points @ points.T,
        )
    )

    clusters = [[i] for i in range(n)]
    # pair_sum[a][b]: sum of pairwise point distances between clusters a, b.
    # Merging A and B updates sums additively, no distance recomputation.
    pair_sum = {}
    for a in range(n):
        for b in range(a + 1, n):
            pair_sum[(a, b)] = dist[a, b]

    def avg(a, b):
        key = (a, b) if a < b else (b, a)
        return pair_sum[key] / (len(clusters[a]) * len(clusters[b]))

    alive = set(range(n))
    while len(alive) > 1:
        best = None
        for a in sorted(alive):
            for b in sorted(alive):
                if b <= a:
                    continue
                d = avg(a, b)
                m1 = min(clusters[a][0], clusters[b][0])
                m2 = max(clusters[a][0], clusters[b][0])
                cand = (d, m1, m2, a, b)
                if best is None or cand < best:
                    best = cand
        d, _, _, a, b = best
        if d > threshold:
            break
        # merge b into a
        for c in alive:
            if c in (a, b):
                continue
            ka = (min(a, c), max(a, c))
            kb = (min(b, c), max(b, c))
            pair_sum[ka] = pair_sum[ka] + pair_sum.pop(kb)
        pair_sum.pop((min(a, b), max(a, b)))
        clusters[a] = sorted(clusters[a] + clusters[b])
        clusters[b] = None
        alive.remove(b)

    groups = sorted((tuple(clusters[a]) for a in alive), key=lambda c: c[0])
    return ClusterAssignment(clusters=tuple(groups))
