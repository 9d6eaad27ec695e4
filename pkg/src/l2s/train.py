"""End-to-end training of the screening model.

Alternating minimization: stochastic-relaxation SGD updates the cluster
weights while candidate sets are frozen, then a greedy knapsack pass
rebuilds the candidate sets for the current hard clustering. Cluster
choices are sampled with Gumbel noise and pushed through a
straight-through estimator so the discrete routing stays differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kmeans import spherical_kmeans
from .knapsack import collect_stats, greedy_knapsack
from .screen import ScreeningModel, screened_topk_batch
from .softmax import SoftmaxLayer, label_contexts
from .tensor import as_matrix, gumbel_sample, spawn_rngs

# Floor applied to cluster probabilities before the log in the Gumbel
# perturbation; keeps the relaxation finite even for starved clusters.
_LOG_FLOOR = 1e-300


@dataclass
class TrainConfig:
    """Hyperparameters for screening-model training.

    `budget` caps the average candidate-set size; `lam` down-weights
    wasted candidates relative to missed ones; `gamma` scales the
    soft budget penalty. Temperature stays fixed (no annealing).
    """

    r: int
    budget: float
    lam: float = 3e-4
    gamma: float = 10.0
    outer_iters: int = 20
    lr: float = 0.05
    batch_size: int = 64
    temperature: float = 1.0
    ema_decay: float = 0.9
    seed: int = 0
    k: int = 5
    epochs_per_step: int = 1
    probe_frac: float = 0.02
    kmeans_iters: int = 50

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must be in (0, 1), got {self.lam}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.outer_iters < 0 or self.batch_size < 1 or self.k < 1:
            raise ValueError("need outer_iters >= 0, batch_size >= 1, k >= 1")
        if self.budget < self.k:
            raise ValueError(
                f"budget {self.budget} cannot seed {self.k} candidates per cluster"
            )


@dataclass
class TrainState:
    """Mutable state threaded through SGD batches and knapsack rebuilds."""

    weights: np.ndarray  # (r, d) cluster weights
    masks: np.ndarray  # (r, L) candidate sets, fixed during SGD
    sizes: np.ndarray  # (r,) candidate-set sizes
    mean_size_ema: float  # moving average of the hard batch candidate size
    step: int
    rng: np.random.Generator


@dataclass
class LogEntry:
    """One training half-step: an SGD pass or a candidate-set rebuild."""

    step: int
    phase: str  # "sgd" | "knapsack"
    loss: float  # hard mismatch objective over the training slice
    mean_size: float
    mean_size_ema: float
    probe_p5: float


def _row_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cluster_probs(weights: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Soft cluster membership: softmax over cluster-weight inner products."""
    s = weights @ h
    e = np.exp(s - s.max())
    return e / e.sum()


def gumbel_softmax_sample(probs: np.ndarray, g: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Relaxed one-hot sample: softmax((log probs + g) / temperature)."""
    if probs.shape != g.shape:
        raise ValueError(f"probs shape {probs.shape} != noise shape {g.shape}")
    pert = (np.log(np.maximum(probs, _LOG_FLOOR)) + g) / temperature
    e = np.exp(pert - pert.max())
    return e / e.sum()


def straight_through(p: np.ndarray) -> tuple[np.ndarray, int]:
    """Hard one-hot of the relaxed sample; gradients belong to the soft p."""
    idx = int(np.argmax(p))
    hard = np.zeros_like(p)
    hard[idx] = 1.0
    return hard, idx


def mismatch_costs(masks: np.ndarray, sizes: np.ndarray, labels: np.ndarray, lam: float) -> np.ndarray:
    """Cost of routing each sample to each cluster, shape (n, r).

    For binary candidate sets the squared-error mismatch collapses to
    (k - hits) + lam * (size - hits) with hits = |labels_i & c_t|.
    """
    k = labels.shape[1]
    hits = masks[:, labels].sum(axis=2).T  # (n, r)
    return (k - hits) + lam * (sizes[None, :] - hits)


def _relaxed_batch(weights, batch_h, g, temperature):
    scores = batch_h @ weights.T
    probs = _row_softmax(scores)
    pert = (np.log(np.maximum(probs, _LOG_FLOOR)) + g) / temperature
    return _row_softmax(pert)


def _penalty_slopes(costs, sizes, mean_size_ema, config, n):
    """d(loss)/d(soft sample) per cluster: mismatch cost plus the gated
    budget slope through the batch-mean candidate size."""
    gate = 1.0 if mean_size_ema > config.budget else 0.0
    return costs + config.gamma * gate * sizes[None, :] / n


def soft_surrogate_loss(
    weights: np.ndarray,
    masks: np.ndarray,
    sizes: np.ndarray,
    batch_h: np.ndarray,
    batch_y: np.ndarray,
    g: np.ndarray,
    mean_size_ema: float,
    config: TrainConfig,
) -> float:
    """The differentiable loss batch_loss_and_grad's gradient belongs to.

    Identical forward pass with the hard one-hot replaced by the soft
    relaxed sample and the budget penalty linearized when its gate (the
    moving average exceeding the budget) is active. Used by the
    finite-difference gradient checks.
    """
    n = batch_h.shape[0]
    p = _relaxed_batch(weights, batch_h, g, config.temperature)
    costs = mismatch_costs(masks, sizes, batch_y, config.lam)
    slopes = _penalty_slopes(costs, sizes, mean_size_ema, config, n)
    return float((slopes * p).sum())


def batch_loss_and_grad(
    weights: np.ndarray,
    masks: np.ndarray,
    sizes: np.ndarray,
    batch_h: np.ndarray,
    batch_y: np.ndarray,
    g: np.ndarray,
    mean_size_ema: float,
    config: TrainConfig,
) -> tuple[float, np.ndarray, np.ndarray]:
    """One straight-through forward/backward over a mini-batch.

    Returns (loss, grad, hard_sizes): the reported loss uses the hard
    cluster choices plus the moving-average budget penalty; grad is the
    exact gradient of soft_surrogate_loss with respect to the weights;
    hard_sizes are the chosen clusters' candidate-set sizes, which feed
    the moving average.
    """
    n = batch_h.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    p = _relaxed_batch(weights, batch_h, g, config.temperature)
    hard = np.argmax(p, axis=1)

    costs = mismatch_costs(masks, sizes, batch_y, config.lam)
    loss = float(
        costs[np.arange(n), hard].mean()
        + config.gamma * max(0.0, mean_size_ema - config.budget)
    )

    slopes = _penalty_slopes(costs, sizes, mean_size_ema, config, n)
    # Backward through the relaxation softmax; the log-softmax Jacobian
    # of the cluster probabilities folds away because q sums to zero.
    q = p * (slopes - (slopes * p).sum(axis=1, keepdims=True)) / config.temperature
    grad = q.T @ batch_h
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(q).all(axis=1))
        raise RuntimeError(f"non-finite gradient at batch index {bad[0]}")
    return loss, grad, sizes[hard]


def sgd_epoch(state: TrainState, contexts: np.ndarray, labels: np.ndarray, config: TrainConfig) -> TrainState:
    """One shuffled pass over the training contexts with fixed candidate sets.

    Each sample gets a fresh Gumbel draw; the learning rate decays as
    1/sqrt(step) and the candidate-size moving average is updated after
    every batch.
    """
    n = contexts.shape[0]
    r = state.weights.shape[0]
    order = state.rng.permutation(n)
    for start in range(0, n, config.batch_size):
        sel = order[start : start + config.batch_size]
        g = gumbel_sample(state.rng, sel.size * r).reshape(sel.size, r)
        _, grad, hard_sizes = batch_loss_and_grad(
            state.weights,
            state.masks,
            state.sizes,
            contexts[sel],
            labels[sel],
            g,
            state.mean_size_ema,
            config,
        )
        lr = config.lr / np.sqrt(state.step + 1.0)
        state.weights -= lr * grad
        state.step += 1
        state.mean_size_ema = (
            config.ema_decay * state.mean_size_ema
            + (1.0 - config.ema_decay) * float(hard_sizes.mean())
        )
    return state


def hard_mismatch_loss(
    weights: np.ndarray,
    masks: np.ndarray,
    sizes: np.ndarray,
    contexts: np.ndarray,
    labels: np.ndarray,
    lam: float,
) -> tuple[float, float]:
    """Deterministic training objective under hard cluster assignment.

    Returns (total mismatch loss, mean candidate size) over the given
    contexts. This is the quantity the training log tracks.
    """
    assigns = np.argmax(contexts @ weights.T, axis=1)
    k = labels.shape[1]
    hits = masks[assigns[:, None], labels].sum(axis=1)
    per_sample = (k - hits) + lam * (sizes[assigns] - hits)
    return float(per_sample.sum()), float(sizes[assigns].mean())


def _probe_p5(weights, masks, budget, layer, probe_h, probe_y):
    if probe_h.shape[0] == 0:
        return float("nan")
    model = ScreeningModel(weights.copy(), masks.copy(), budget)
    pred, _ = screened_topk_batch(model, layer, probe_h, probe_y.shape[1])
    overlap = (pred[:, :, None] == probe_y[:, None, :]).any(axis=2).sum(axis=1)
    return float(overlap.mean() / probe_y.shape[1])


def write_log(entries: list[LogEntry], path) -> None:
    """Tab-separated training log: step, loss, mean size, EMA size, probe P@5."""
    with open(path, "w", encoding="ascii") as f:
        for e in entries:
            f.write(
                f"{e.step}\t{e.loss!r}\t{e.mean_size!r}\t"
                f"{e.mean_size_ema!r}\t{e.probe_p5!r}\n"
            )


def train(
    contexts: np.ndarray,
    layer: SoftmaxLayer,
    config: TrainConfig,
    labels: np.ndarray | None = None,
    log_path=None,
) -> tuple[ScreeningModel, list[LogEntry]]:
    """Full training run; returns the model plus per-half-step log entries.

    Ground-truth label sets come from the exact softmax (or are passed in
    to amortize labeling across runs). Cluster weights start from
    spherical k-means, candidate sets start empty, and each outer
    iteration runs SGD epochs then rebuilds the sets by greedy knapsack.
    With outer_iters=0 this degenerates to the clustering-only baseline:
    k-means initialization plus a single knapsack pass.

    The returned model is the (weights, sets) pair with the lowest hard
    mismatch loss among the knapsack half-steps, not necessarily the
    last one: stochastic epochs can drift off an already-optimal
    initialization, and the first knapsack half-step reproduces the
    clustering-only baseline exactly (empty initial sets make the first
    epoch's gradient zero), so the selected model is never worse than it.
    The log still records every half-step in order.
    """
    contexts = as_matrix(contexts, "contexts")
    n = contexts.shape[0]
    if n < config.r:
        raise ValueError(f"need at least r={config.r} contexts, got {n}")
    if labels is None:
        labels = label_contexts(layer, contexts, config.k)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n, config.k):
        raise ValueError(f"labels shape {labels.shape} != ({n}, {config.k})")

    n_probe = min(int(round(config.probe_frac * n)), n - config.r)
    n_train = n - n_probe
    train_h, train_y = contexts[:n_train], labels[:n_train]
    probe_h, probe_y = contexts[n_train:], labels[n_train:]

    kmeans_rng, sgd_rng = spawn_rngs(config.seed, 2)
    km = spherical_kmeans(train_h, config.r, kmeans_rng, config.kmeans_iters)
    vocab = layer.vocab_size
    state = TrainState(
        weights=km.centroids.copy(),
        masks=np.zeros((config.r, vocab), dtype=bool),
        sizes=np.zeros(config.r, dtype=np.int64),
        mean_size_ema=0.0,
        step=0,
        rng=sgd_rng,
    )

    entries: list[LogEntry] = []
    best: tuple[float, np.ndarray, np.ndarray] | None = None

    def record(phase: str) -> None:
        nonlocal best
        loss, mean_size = hard_mismatch_loss(
            state.weights, state.masks, state.sizes, train_h, train_y, config.lam
        )
        if not np.isfinite(loss):
            raise RuntimeError("training aborted: mismatch loss is not finite")
        p5 = _probe_p5(state.weights, state.masks, config.budget, layer, probe_h, probe_y)
        entries.append(
            LogEntry(len(entries) + 1, phase, loss, mean_size, state.mean_size_ema, p5)
        )
        if phase == "knapsack" and (best is None or loss < best[0]):
            best = (loss, state.weights.copy(), state.masks.copy())

    def rebuild_sets() -> None:
        assigns = np.argmax(train_h @ state.weights.T, axis=1)
        stats = collect_stats(assigns, train_y, config.r, vocab)
        state.masks = greedy_knapsack(stats, config.budget, config.lam, config.k)
        state.sizes = state.masks.sum(axis=1).astype(np.int64)

    for _ in range(config.outer_iters):
        for _ in range(config.epochs_per_step):
            sgd_epoch(state, train_h, train_y, config)
        record("sgd")
        rebuild_sets()
        record("knapsack")
    if config.outer_iters == 0:
        rebuild_sets()
        record("knapsack")

    model = ScreeningModel(best[1], best[2], config.budget)
    if log_path is not None:
        write_log(entries, log_path)
    return model, entries
