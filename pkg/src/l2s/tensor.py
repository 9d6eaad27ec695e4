"""Dense numeric kernels shared by every other module.

Everything operates on float64 numpy arrays: matrices are row-major 2-D
arrays, vectors are 1-D arrays. All selection ties break toward the lower
index so results are reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Sweep cap for the one-sided Jacobi SVD.
_SVD_MAX_SWEEPS = 60
_SVD_TOL = 1e-12


@dataclass
class OpCounter:
    """Counts inner products executed, for cost-model assertions."""

    inner_products: int = 0

    def add(self, n: int) -> None:
        self.inner_products += n


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite float64 2-D array."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(data, name: str = "vector") -> np.ndarray:
    """Validate and return a finite float64 1-D array."""
    v = np.ascontiguousarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product m @ v with an explicit shape check."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ValueError(
            f"matvec shape mismatch: matrix {m.shape} vs vector {v.shape}"
        )
    return m @ v


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, sorted by (score desc, index asc).

    A stable sort on the negated scores realizes the lowest-index
    tie-break without comparing index tuples explicitly.
    """
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} scores")
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def top_k(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """The k largest entries of `scores` as (index, score) pairs."""
    idx = top_k_indices(scores, k)
    return [(int(i), float(scores[i])) for i in idx]


def top_k_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top_k_indices for a 2-D score array.

    Uses argpartition for speed; any row with a score tie spanning the
    k-boundary falls back to the full stable sort so the result matches
    top_k_indices exactly on every row.
    """
    n, width = scores.shape
    if not 1 <= k <= width:
        raise ValueError(f"k={k} out of range for row width {width}")
    if k == width:
        return np.argsort(-scores, axis=1, kind="stable")

    cand = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    # Order candidates by (score desc, index asc): stable sort on the
    # negated scores after an index sort.
    by_index = np.argsort(cand, axis=1, kind="stable")
    cand = np.take_along_axis(cand, by_index, axis=1)
    cand_scores = np.take_along_axis(scores, cand, axis=1)
    by_score = np.argsort(-cand_scores, axis=1, kind="stable")
    cand = np.take_along_axis(cand, by_score, axis=1)
    cand_scores = np.take_along_axis(cand_scores, by_score, axis=1)

    boundary = cand_scores[:, k - 1 : k]
    ties_total = np.count_nonzero(scores == boundary, axis=1)
    ties_kept = np.count_nonzero(cand_scores == boundary, axis=1)
    for row in np.flatnonzero(ties_total > ties_kept):
        cand[row] = top_k_indices(scores[row], k)
    return cand


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; equal seeds give bit-identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent child generators derived deterministically from seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    """Map uniforms on the open interval (0, 1) to Gumbel(0, 1) draws."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("uniform input must lie strictly inside (0, 1)")
    return -np.log(-np.log(u))


def gumbel_sample(rng: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. Gumbel(0, 1) draws from `rng`.

    random() already excludes 1.0; exact zeros are redrawn so the log-log
    transform never produces infinities.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    u = rng.random(n)
    bad = u == 0.0
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return gumbel_from_uniform(u)


def truncated_svd(m: np.ndarray, rank: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-truncated SVD via one-sided Jacobi rotations.

    Returns (U, S, Vt) with U of shape (rows, rank), S the leading
    singular values in non-increasing order, and Vt of shape (rank, cols).
    Intended for desk-scale matrices; raises if the sweep cap is hit
    before all column pairs are orthogonal.
    """
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {m.shape}")
    rows, cols = m.shape
    if not 1 <= rank <= min(rows, cols):
        raise ValueError(f"rank={rank} out of range for shape {m.shape}")

    if rows < cols:
        u, s, vt = truncated_svd(m.T, rank)
        return vt.T, s, u.T

    a = np.array(m, dtype=np.float64, copy=True)
    v = np.eye(cols)

    converged = False
    for _ in range(_SVD_MAX_SWEEPS):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = a[:, p] @ a[:, p]
                beta = a[:, q] @ a[:, q]
                gamma = a[:, p] @ a[:, q]
                if abs(gamma) <= _SVD_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            converged = True
            break
    if not converged:
        raise RuntimeError(
            f"Jacobi SVD did not converge within {_SVD_MAX_SWEEPS} sweeps"
        )

    sigma = np.sqrt(np.sum(a * a, axis=0))
    order = np.argsort(-sigma, kind="stable")[:rank]
    s_out = sigma[order]
    u_out = np.zeros((rows, rank))
    nonzero = s_out > 0.0
    u_out[:, nonzero] = a[:, order[nonzero]] / s_out[nonzero]
    vt_out = v[:, order].T
    return u_out, s_out, vt_out
