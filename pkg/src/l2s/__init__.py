"""Learned screening for fast top-k softmax inference.

A light-weight screen routes each context vector to one of r clusters
and scores only that cluster's candidate labels exactly, cutting
per-query cost from O(L*d) to O((r + mean candidate size) * d). Cluster
weights are trained end-to-end with a Gumbel straight-through relaxation
alternating with greedy-knapsack candidate-set assignment.
"""

from .bench import (
    BenchReport,
    PerplexityReport,
    cluster_sweep,
    hybrid_perplexity,
    precision_at_k,
    run_bench,
)
from .dataio import (
    SynthSpec,
    generate_synthetic,
    load_layer,
    load_model,
    load_tensor,
    sample_targets,
    save_layer,
    save_model,
    save_tensor,
)
from .kmeans import KmeansState, spherical_kmeans
from .knapsack import ClusterStats, assignment_loss, collect_stats, greedy_knapsack
from .screen import (
    ScreenedPrediction,
    ScreeningModel,
    assign_cluster,
    assign_clusters,
    candidate_logit_count,
    screened_topk,
    screened_topk_batch,
)
from .softmax import SoftmaxLayer, TopKResult, exact_topk, label_contexts, logits, probabilities
from .tensor import (
    OpCounter,
    gumbel_sample,
    make_rng,
    matvec,
    top_k,
    truncated_svd,
)
from .train import (
    LogEntry,
    TrainConfig,
    TrainState,
    batch_loss_and_grad,
    cluster_probs,
    gumbel_softmax_sample,
    sgd_epoch,
    soft_surrogate_loss,
    straight_through,
    train,
)

__version__ = "0.1.0"
