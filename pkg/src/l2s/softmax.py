"""The exact softmax output layer.

This is both the production baseline being accelerated and the oracle
that produces ground-truth top-k label sets and benchmark references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import OpCounter, as_matrix, as_vector, top_k_indices, top_k_rows


@dataclass
class SoftmaxLayer:
    """Output layer weights: row s of `weights` scores label s.

    weights: (vocab_size, dim) float64; bias: (vocab_size,) float64.
    Immutable after construction.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "weights")
        self.bias = as_vector(self.bias, "bias")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} != vocab size "
                f"{self.weights.shape[0]}"
            )

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class TopKResult:
    """Top-k labels with their logits, sorted by (logit desc, index asc)."""

    indices: np.ndarray
    scores: np.ndarray
    k: int


def logits(layer: SoftmaxLayer, h: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Scores of every label: weights @ h + bias."""
    if h.shape[0] != layer.dim:
        raise ValueError(
            f"context dim {h.shape[0]} != layer dim {layer.dim}"
        )
    if counter is not None:
        counter.add(layer.vocab_size)
    return layer.weights @ h + layer.bias


def probabilities(x: np.ndarray) -> np.ndarray:
    """Softmax of a logit vector, max-subtracted for overflow safety."""
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


def exact_topk(layer: SoftmaxLayer, h: np.ndarray, k: int, counter: OpCounter | None = None) -> TopKResult:
    """Top-k labels by exact logits over the full vocabulary."""
    x = logits(layer, h, counter)
    idx = top_k_indices(x, k)
    return TopKResult(indices=idx, scores=x[idx], k=k)


def label_contexts(layer: SoftmaxLayer, contexts: np.ndarray, k: int = 5) -> np.ndarray:
    """Ground-truth top-k label ids for every context row.

    Returns an (N, k) int array whose rows are ordered exactly as
    exact_topk orders them. Computed in blocks so the full N x vocab
    logit matrix never materializes.
    """
    contexts = as_matrix(contexts, "contexts")
    if contexts.shape[1] != layer.dim:
        raise ValueError(
            f"context dim {contexts.shape[1]} != layer dim {layer.dim}"
        )
    n = contexts.shape[0]
    block = max(1, 2_000_000 // layer.vocab_size)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        x = contexts[start:stop] @ layer.weights.T + layer.bias
        out[start:stop] = top_k_rows(x, k)
    return out
