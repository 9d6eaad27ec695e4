"""Quality and speed measurement for the screening predictor.

Precision@k against the exact softmax, single-threaded wall-clock
speedups (informational; hardware-dependent), the deterministic
logit-count speedup L / (r + mean candidate size), cluster-count sweeps,
and hybrid perplexity with low-rank fallback logits for tokens outside
the candidate set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .screen import (
    ScreeningModel,
    assign_clusters,
    candidate_logit_count,
    screened_topk,
    screened_topk_batch,
)
from .softmax import SoftmaxLayer, TopKResult, exact_topk, label_contexts
from .tensor import OpCounter, as_matrix, truncated_svd
from .train import TrainConfig, train


@dataclass
class BenchReport:
    """Benchmark outcome over one (model, layer, context set)."""

    precision: dict[int, float]
    mean_candidate_size: float
    exact_time_ns: float  # per-query median
    screened_time_ns: float  # per-query median
    speedup: float  # wall-clock, hardware-dependent
    fallback_rate: float
    logit_speedup: float  # L / (r + mean candidate size), deterministic
    counter_speedup: float  # measured from inner-product counters
    n_queries: int = 0

    @property
    def p_at_1(self) -> float:
        return self.precision[1]

    @property
    def p_at_5(self) -> float:
        return self.precision[5]


@dataclass
class PerplexityReport:
    exact_ppl: float
    hybrid_ppl: float
    svd_rank: int

    @property
    def relative_gap(self) -> float:
        return abs(self.hybrid_ppl - self.exact_ppl) / self.exact_ppl


def precision_at_k(approx: TopKResult, exact: TopKResult, k: int) -> float:
    """|top-k(approx) ∩ top-k(exact)| / k."""
    if approx.indices.shape[0] < k or exact.indices.shape[0] < k:
        raise ValueError(f"both results need at least k={k} entries")
    shared = np.intersect1d(approx.indices[:k], exact.indices[:k]).size
    return shared / k


def _median_times(fn, queries, repetitions):
    """Per-query median wall time of fn(h) over repetition passes."""
    samples = np.empty((repetitions, len(queries)))
    for rep in range(repetitions):
        for i, h in enumerate(queries):
            t0 = time.perf_counter_ns()
            fn(h)
            samples[rep, i] = time.perf_counter_ns() - t0
    return float(np.median(np.median(samples, axis=0)))


def run_bench(
    model: ScreeningModel,
    layer: SoftmaxLayer,
    contexts: np.ndarray,
    ks: tuple[int, ...] = (1, 5),
    repetitions: int = 5,
) -> BenchReport:
    """Measure precision and per-query latency, single-threaded.

    One untimed warm-up pass runs first and doubles as the accuracy
    pass; timing then repeats each query `repetitions` times and keeps
    per-query medians.
    """
    contexts = as_matrix(contexts, "contexts")
    ks = tuple(sorted(set(int(k) for k in ks)))
    k_max = ks[-1]
    n = contexts.shape[0]

    # Warm-up / accuracy pass.
    exact_counter, screened_counter = OpCounter(), OpCounter()
    hits = {k: 0 for k in ks}
    fallbacks = 0
    for i in range(n):
        h = contexts[i]
        exact = exact_topk(layer, h, k_max, exact_counter)
        pred = screened_topk(model, layer, h, k_max, screened_counter)
        if pred.fallback:
            fallbacks += 1
        for k in ks:
            hits[k] += np.intersect1d(pred.topk.indices[:k], exact.indices[:k]).size
    precision = {k: hits[k] / (k * n) for k in ks}

    exact_ns = _median_times(lambda h: exact_topk(layer, h, k_max), contexts, repetitions)
    screened_ns = _median_times(
        lambda h: screened_topk(model, layer, h, k_max), contexts, repetitions
    )

    mean_size = candidate_logit_count(model, contexts)
    return BenchReport(
        precision=precision,
        mean_candidate_size=mean_size,
        exact_time_ns=exact_ns,
        screened_time_ns=screened_ns,
        speedup=exact_ns / screened_ns,
        fallback_rate=fallbacks / n,
        logit_speedup=layer.vocab_size / (model.r + mean_size),
        counter_speedup=exact_counter.inner_products / screened_counter.inner_products,
        n_queries=n,
    )


def precision_against_labels(
    model: ScreeningModel,
    layer: SoftmaxLayer,
    contexts: np.ndarray,
    labels: np.ndarray,
) -> dict[int, float]:
    """P@1 and P@k against precomputed exact top-k label rows (rank order
    preserved), vectorized for large context sets."""
    k = labels.shape[1]
    pred, _ = screened_topk_batch(model, layer, contexts, k)
    p1 = float((pred[:, 0] == labels[:, 0]).mean())
    overlap = (pred[:, :, None] == labels[:, None, :]).any(axis=2).sum(axis=1)
    return {1: p1, k: float(overlap.mean() / k)}


def cluster_sweep(
    contexts: np.ndarray,
    layer: SoftmaxLayer,
    r_values: list[int],
    budgets: list[float],
    config: TrainConfig,
    labels: np.ndarray | None = None,
) -> list[dict]:
    """Train one model per (r, budget) pair and report quality per row.

    Budgets are chosen by the caller to equalize r + mean candidate size
    across rows so per-query compute is comparable.
    """
    if len(r_values) != len(budgets):
        raise ValueError("r_values and budgets must pair up")
    contexts = as_matrix(contexts, "contexts")
    if labels is None:
        labels = label_contexts(layer, contexts, config.k)
    rows = []
    for r, budget in zip(r_values, budgets):
        cfg = replace(config, r=int(r), budget=float(budget))
        model, entries = train(contexts, layer, cfg, labels=labels)
        precision = precision_against_labels(model, layer, contexts, labels)
        mean_size = candidate_logit_count(model, contexts)
        t0 = time.perf_counter_ns()
        sample = contexts[: min(200, contexts.shape[0])]
        for h in sample:
            screened_topk(model, layer, h, config.k)
        per_query_ns = (time.perf_counter_ns() - t0) / sample.shape[0]
        rows.append(
            {
                "r": int(r),
                "budget": float(budget),
                "p_at_1": precision[1],
                "p_at_5": precision[config.k],
                "mean_candidate_size": mean_size,
                "logit_speedup": layer.vocab_size / (r + mean_size),
                "loss": entries[-1].loss,
                "time_screened_ns": per_query_ns,
            }
        )
    return rows


def _log_sum_exp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def hybrid_perplexity(
    model: ScreeningModel,
    layer: SoftmaxLayer,
    svd_rank: int,
    eval_contexts: np.ndarray,
    targets: np.ndarray,
) -> PerplexityReport:
    """Perplexity with exact logits inside the candidate set and
    rank-truncated approximate logits outside it.

    Probabilities come from the combined logit vector over the full
    vocabulary; perplexity is exp(mean negative log-likelihood).
    """
    eval_contexts = as_matrix(eval_contexts, "eval_contexts")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape[0] != eval_contexts.shape[0]:
        raise ValueError("one target per eval context required")
    vocab = layer.vocab_size
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ValueError(f"target id out of range [0, {vocab})")
    if not 1 <= svd_rank <= min(vocab, layer.dim):
        raise ValueError(f"svd_rank={svd_rank} out of range for {layer.weights.shape}")

    u, s, vt = truncated_svd(layer.weights, svd_rank)
    assigns = assign_clusters(model, eval_contexts)
    n = eval_contexts.shape[0]
    nll_exact = np.empty(n)
    nll_hybrid = np.empty(n)
    block = max(1, 2_000_000 // vocab)
    for t in range(model.r):
        rows = np.flatnonzero(assigns == t)
        idx = model.candidate_lists[t]
        for start in range(0, rows.size, block):
            sel = rows[start : start + block]
            h = eval_contexts[sel]
            exact = h @ layer.weights.T + layer.bias
            approx = (h @ vt.T * s) @ u.T + layer.bias
            approx[:, idx] = exact[:, idx]
            tgt = targets[sel]
            pick = np.arange(sel.size)
            nll_exact[sel] = _log_sum_exp(exact) - exact[pick, tgt]
            nll_hybrid[sel] = _log_sum_exp(approx) - approx[pick, tgt]
    return PerplexityReport(
        exact_ppl=float(np.exp(nll_exact.mean())),
        hybrid_ppl=float(np.exp(nll_hybrid.mean())),
        svd_rank=svd_rank,
    )


def format_report(report: BenchReport) -> str:
    """One metric per line, name<TAB>value; wall-clock lines are prefixed
    with `time_` so deterministic diffs can exclude them."""
    lines = []
    for k in sorted(report.precision):
        lines.append(f"p_at_{k}\t{report.precision[k]!r}")
    lines.append(f"mean_candidate_size\t{report.mean_candidate_size!r}")
    lines.append(f"fallback_rate\t{report.fallback_rate!r}")
    lines.append(f"logit_speedup\t{report.logit_speedup!r}")
    lines.append(f"counter_speedup\t{report.counter_speedup!r}")
    lines.append(f"n_queries\t{report.n_queries}")
    lines.append(f"time_exact_ns\t{report.exact_time_ns!r}")
    lines.append(f"time_screened_ns\t{report.screened_time_ns!r}")
    lines.append(f"time_speedup\t{report.speedup!r}")
    return "\n".join(lines) + "\n"


def format_sweep(rows: list[dict]) -> str:
    """Sweep rows in the same name<TAB>value convention, one block per r."""
    lines = []
    for row in rows:
        for key in (
            "r",
            "budget",
            "p_at_1",
            "p_at_5",
            "mean_candidate_size",
            "logit_speedup",
            "loss",
            "time_screened_ns",
        ):
            lines.append(f"sweep.{row['r']}.{key}\t{row[key]!r}")
    return "\n".join(lines) + "\n"


def sweep_csv(rows: list[dict]) -> str:
    cols = [
        "r",
        "budget",
        "p_at_1",
        "p_at_5",
        "mean_candidate_size",
        "logit_speedup",
        "loss",
        "time_screened_ns",
    ]
    out = [",".join(cols)]
    for row in rows:
        out.append(",".join(repr(row[c]) for c in cols))
    return "\n".join(out) + "\n"
