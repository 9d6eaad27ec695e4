"""Candidate-set selection under an average-size budget.

Once training contexts are assigned to clusters, choosing each cluster's
candidate label set is a 0/1 knapsack: item (t, s) puts label s into
cluster t's set, weighs as many samples as the cluster holds, and is
worth the mismatch-loss reduction it buys. A ratio-greedy pass solves it;
a brute-force oracle for tiny instances lives in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ClusterStats:
    """Per-cluster label statistics aggregated from ground-truth sets.

    counts[t] is the cluster population N_t; pos[t, s] counts members of
    cluster t whose ground-truth set contains label s. The negative count
    is implied: neg[t, s] = counts[t] - pos[t, s].
    """

    counts: np.ndarray  # (r,) int64
    pos: np.ndarray  # (r, L) int64
    total: int  # N

    @property
    def r(self) -> int:
        return self.pos.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.pos.shape[1]

    def neg(self) -> np.ndarray:
        return self.counts[:, None] - self.pos


def collect_stats(assignments: np.ndarray, labels: np.ndarray, r: int, vocab_size: int) -> ClusterStats:
    """Aggregate per-(cluster, label) positive counts.

    assignments: (N,) cluster ids; labels: (N, k) ground-truth label ids.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if assignments.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{assignments.shape[0]} assignments vs {labels.shape[0]} label rows"
        )
    if assignments.size and (assignments.min() < 0 or assignments.max() >= r):
        raise ValueError(f"cluster id out of range [0, {r})")
    if labels.size and (labels.min() < 0 or labels.max() >= vocab_size):
        raise ValueError(f"label id out of range [0, {vocab_size})")

    counts = np.bincount(assignments, minlength=r).astype(np.int64)
    pos = np.zeros((r, vocab_size), dtype=np.int64)
    k = labels.shape[1]
    np.add.at(pos, (np.repeat(assignments, k), labels.ravel()), 1)
    return ClusterStats(counts=counts, pos=pos, total=int(assignments.shape[0]))


def item_values(stats: ClusterStats, lam: float) -> np.ndarray:
    """Loss reduction from including each (cluster, label) item.

    Including (t, s) removes pos[t, s] missed positives and adds
    lam * neg[t, s] wasted negatives, so value = pos - lam * neg.
    Kept as a single seam so the value function is easy to swap.
    """
    return stats.pos - lam * stats.neg()


def greedy_knapsack(stats: ClusterStats, budget: float, lam: float, k_seed: int) -> np.ndarray:
    """Candidate sets {c_t} as an (r, L) boolean mask.

    Two phases: every cluster is first seeded with its k_seed labels of
    highest positive count (ties to the lower label id) so predictions
    always have k candidates; then positive-value items are scanned in
    value/weight order (ties: lower cluster, lower label) and each item
    is added iff it still fits under the budget * N weight capacity.
    """
    r, vocab = stats.r, stats.vocab_size
    k_seed = min(k_seed, vocab)
    capacity = float(budget) * stats.total

    masks = np.zeros((r, vocab), dtype=bool)
    if k_seed > 0:
        # argsort on -pos is stable, so equal counts keep ascending label order.
        seeds = np.argsort(-stats.pos, axis=1, kind="stable")[:, :k_seed]
        np.put_along_axis(masks, seeds, True, axis=1)
    used = int((stats.counts * masks.sum(axis=1)).sum())
    if used > capacity:
        raise ValueError(
            f"seeding needs weight {used} > capacity {capacity}; "
            f"budget must be at least {used / max(stats.total, 1)}"
        )

    values = item_values(stats, lam)
    clusters, labels = np.nonzero((values > 0.0) & ~masks)
    if clusters.size:
        vals = values[clusters, labels]
        weights = stats.counts[clusters].astype(np.float64)
        ratio = vals / weights  # weights > 0: empty clusters have no positive items
        order = np.lexsort((labels, clusters, -ratio))
        for i in order:
            w = int(weights[i])
            if used + w <= capacity:
                masks[clusters[i], labels[i]] = True
                used += w
    return masks


def assignment_loss(stats: ClusterStats, masks: np.ndarray, lam: float) -> float:
    """Total mismatch loss of candidate sets against aggregated counts.

    sum_t sum_s [pos * (1 - c)^2 + lam * neg * c^2] for binary c.
    """
    if masks.shape != stats.pos.shape:
        raise ValueError(f"mask shape {masks.shape} != stats shape {stats.pos.shape}")
    in_pos = stats.pos[masks].sum()
    in_neg = stats.neg()[masks].sum()
    return float(stats.pos.sum() - in_pos + lam * in_neg)
