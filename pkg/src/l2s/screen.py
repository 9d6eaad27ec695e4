"""The screening predictor: cluster lookup plus per-cluster candidate sets.

A query context is routed to the cluster whose weight vector gives the
largest inner product, and exact logits are computed only for that
cluster's candidate labels, cutting per-query cost from O(L*d) to
O((r + candidate_count) * d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .softmax import SoftmaxLayer, TopKResult, exact_topk
from .tensor import OpCounter, as_matrix, top_k_indices, top_k_rows


@dataclass
class ScreeningModel:
    """Trained screen: cluster weights (r, d) and candidate masks (r, L).

    Candidate sets are kept both as boolean masks (membership tests) and
    as ascending index lists (iteration order), derived once here.
    """

    cluster_weights: np.ndarray
    candidate_masks: np.ndarray
    budget: float
    candidate_lists: list[np.ndarray] = field(init=False, repr=False)
    sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.cluster_weights = as_matrix(self.cluster_weights, "cluster_weights")
        masks = np.asarray(self.candidate_masks)
        if masks.dtype != bool or masks.ndim != 2:
            raise ValueError("candidate_masks must be a 2-D boolean array")
        if masks.shape[0] != self.cluster_weights.shape[0]:
            raise ValueError(
                f"{masks.shape[0]} candidate sets for "
                f"{self.cluster_weights.shape[0]} clusters"
            )
        self.candidate_masks = masks
        self.candidate_lists = [np.flatnonzero(row) for row in masks]
        self.sizes = masks.sum(axis=1).astype(np.int64)

    @property
    def r(self) -> int:
        return self.cluster_weights.shape[0]

    @property
    def dim(self) -> int:
        return self.cluster_weights.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.candidate_masks.shape[1]


@dataclass
class ScreenedPrediction:
    cluster: int
    candidate_count: int  # labels actually scored (L when falling back)
    topk: TopKResult
    fallback: bool = False


def assign_cluster(model: ScreeningModel, h: np.ndarray, counter: OpCounter | None = None) -> int:
    """Cluster with the largest weight-context inner product (lowest index wins ties)."""
    if h.shape[0] != model.dim:
        raise ValueError(f"context dim {h.shape[0]} != model dim {model.dim}")
    if counter is not None:
        counter.add(model.r)
    return int(np.argmax(model.cluster_weights @ h))


def assign_clusters(model: ScreeningModel, contexts: np.ndarray) -> np.ndarray:
    """Vectorized assign_cluster over context rows."""
    contexts = as_matrix(contexts, "contexts")
    if contexts.shape[1] != model.dim:
        raise ValueError(f"context dim {contexts.shape[1]} != model dim {model.dim}")
    return np.argmax(contexts @ model.cluster_weights.T, axis=1)


def screened_topk(
    model: ScreeningModel,
    layer: SoftmaxLayer,
    h: np.ndarray,
    k: int,
    counter: OpCounter | None = None,
) -> ScreenedPrediction:
    """Top-k by exact logits restricted to the assigned cluster's candidates.

    Falls back to the full exact top-k (and flags it) when the candidate
    set holds fewer than k labels, so every prediction has k entries.
    """
    if model.vocab_size != layer.vocab_size:
        raise ValueError(
            f"model vocab {model.vocab_size} != layer vocab {layer.vocab_size}"
        )
    t = assign_cluster(model, h, counter)
    idx = model.candidate_lists[t]
    if idx.shape[0] < k:
        result = exact_topk(layer, h, k, counter)
        return ScreenedPrediction(
            cluster=t, candidate_count=layer.vocab_size, topk=result, fallback=True
        )
    if counter is not None:
        counter.add(idx.shape[0])
    scores = layer.weights[idx] @ h + layer.bias[idx]
    # idx is ascending, so the stable local tie-break matches the global one.
    local = top_k_indices(scores, k)
    result = TopKResult(indices=idx[local], scores=scores[local], k=k)
    return ScreenedPrediction(
        cluster=t, candidate_count=idx.shape[0], topk=result, fallback=False
    )


def screened_topk_batch(
    model: ScreeningModel,
    layer: SoftmaxLayer,
    contexts: np.ndarray,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """screened_topk over many contexts at once.

    Returns (indices, fallback) where indices is (N, k) in the same order
    screened_topk produces and fallback marks rows that used the full
    vocabulary. Contexts are grouped by assigned cluster so each group is
    one dense matrix product.
    """
    contexts = as_matrix(contexts, "contexts")
    n = contexts.shape[0]
    assigns = assign_clusters(model, contexts)
    out = np.empty((n, k), dtype=np.int64)
    fallback = np.zeros(n, dtype=bool)
    for t in range(model.r):
        rows = np.flatnonzero(assigns == t)
        if rows.size == 0:
            continue
        idx = model.candidate_lists[t]
        if idx.shape[0] < k:
            fallback[rows] = True
            scores = contexts[rows] @ layer.weights.T + layer.bias
            out[rows] = top_k_rows(scores, k)
            continue
        scores = contexts[rows] @ layer.weights[idx].T + layer.bias[idx]
        out[rows] = idx[top_k_rows(scores, k)]
    return out, fallback


def candidate_logit_count(model: ScreeningModel, contexts: np.ndarray) -> float:
    """Mean candidate-set size over contexts (the per-query cost driver)."""
    assigns = assign_clusters(model, contexts)
    return float(model.sizes[assigns].mean())
