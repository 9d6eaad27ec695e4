"""Spherical k-means over context vectors.

Lloyd iterations on cosine similarity: points are normalized once,
assignment picks the most-similar unit centroid, and each centroid is
recomputed as the normalized mean of its members. Used to initialize
the screening model's cluster weights and as the clustering-only
baseline predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import as_matrix

# Tolerance for the per-iteration objective monotonicity check; pure
# floating-point jitter, not algorithmic slack.
_OBJ_SLACK = 1e-8


@dataclass
class KmeansState:
    centroids: np.ndarray  # (r, d), unit rows
    assignments: np.ndarray  # (N,), values in [0, r)
    inertia: float  # sum of cosine similarities to assigned centroids
    history: list[float] = field(default_factory=list)  # objective per iteration


def _normalize_rows(x: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"{name} row {bad[0]} has zero norm")
    return x / norms[:, None]


def _seed_centroids(unit: np.ndarray, r: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding on cosine distance (1 - similarity)."""
    n = unit.shape[0]
    chosen = np.empty(r, dtype=np.int64)
    chosen[0] = rng.integers(n)
    best_sim = unit @ unit[chosen[0]]
    for j in range(1, r):
        d2 = np.square(np.maximum(0.0, 1.0 - best_sim))
        total = d2.sum()
        if total <= 0.0:
            # All points coincide with chosen centroids; fall back to uniform.
            chosen[j] = rng.integers(n)
        else:
            chosen[j] = rng.choice(n, p=d2 / total)
        best_sim = np.maximum(best_sim, unit @ unit[chosen[j]])
    return unit[chosen].copy()


def spherical_kmeans(
    contexts: np.ndarray,
    r: int,
    rng: np.random.Generator,
    max_iters: int = 50,
) -> KmeansState:
    """Cluster context vectors on the unit sphere into r groups.

    Stops when assignments are unchanged or after max_iters. Empty
    clusters are re-seeded from the point least similar to its own
    centroid, so all r clusters stay populated.
    """
    contexts = as_matrix(contexts, "contexts")
    n = contexts.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= N, got r={r}, N={n}")

    unit = _normalize_rows(contexts, "contexts")
    centroids = _seed_centroids(unit, r, rng)

    assignments = np.full(n, -1, dtype=np.int64)
    objective = -np.inf
    history: list[float] = []

    for _ in range(max_iters):
        sims = unit @ centroids.T
        new_assign = np.argmax(sims, axis=1)
        own_sim = sims[np.arange(n), new_assign]
        new_objective = float(own_sim.sum())
        if new_objective < objective - _OBJ_SLACK * max(1.0, abs(objective)):
            raise RuntimeError(
                f"spherical k-means objective decreased: "
                f"{objective} -> {new_objective}"
            )
        objective = new_objective
        history.append(objective)
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign

        counts = np.bincount(assignments, minlength=r)
        sums = np.zeros((r, unit.shape[1]))
        np.add.at(sums, assignments, unit)
        norms = np.linalg.norm(sums, axis=1)

        # Re-seed empty (or degenerate zero-mean) clusters from the worst
        # fitting points, one distinct point per cluster.
        dead = np.flatnonzero((counts == 0) | (norms == 0.0))
        if dead.size:
            worst = np.argsort(own_sim, kind="stable")
            for t, point in zip(dead, worst[: dead.size]):
                sums[t] = unit[point]
                norms[t] = 1.0
        centroids = sums / norms[:, None]

    return KmeansState(
        centroids=centroids,
        assignments=assignments,
        inertia=objective,
        history=history,
    )
