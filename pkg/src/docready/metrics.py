"""Readiness metrics over topic-space projections.

Relevance of a document set to a query is the mean cosine similarity
between each document's topic distribution and the query's. Coherence is
the reciprocal of document disparity, the Jensen-Rényi divergence of the
set's topic distributions. Both operate on simplex vectors produced by
the topic model and are pure functions, safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cmp_to_key

import numpy as np

__all__ = [
    "JrParams",
    "SetScore",
    "DISPARITY_EPSILON",
    "RELEVANCE_TIE_TOLERANCE",
    "cosine",
    "relevance",
    "renyi_entropy",
    "jr_divergence",
    "disparity",
    "coherence",
    "informationally_equivalent",
    "rank_sets",
]

# Disparity at or below this is treated as exactly zero, flagging
# infinite coherence instead of dividing by a rounding artifact.
DISPARITY_EPSILON = 1e-12

# Relevance values closer than this are tied for ranking purposes.
RELEVANCE_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class JrParams:
    """Jensen-Rényi parameters: entropy order and mixture weights.

    The order must lie in (0,1), the range where the divergence is convex
    and nonnegative. Weights default to uniform when left unset.
    """

    renyi_order: float = 0.5
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.renyi_order < 1.0:
            raise ValueError(f"renyi_order must be in (0, 1), got {self.renyi_order}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.ndim != 1 or len(w) == 0:
                raise ValueError("weights must be a nonempty flat sequence")
            if (w < 0).any():
                raise ValueError("weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError(f"weights must sum to 1, got {float(w.sum())!r}")

    def weight_vector(self, n: int) -> np.ndarray:
        if self.weights is None:
            return np.full(n, 1.0 / n)
        w = np.asarray(self.weights, dtype=np.float64)
        if len(w) != n:
            raise ValueError(f"got {len(w)} weights for {n} distributions")
        return w


@dataclass(frozen=True)
class SetScore:
    """Scores for one document set against one query."""

    set_key: str
    relevance: float
    disparity: float
    coherence: float
    n_docs_scored: int
    n_docs_skipped: int


def _as_distribution(p: object, name: str = "p") -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or len(arr) == 0:
        raise ValueError(f"{name} must be a nonempty 1-d vector")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} has non-finite entries")
    if (arr < 0).any():
        raise ValueError(f"{name} has negative entries")
    if abs(float(arr.sum()) - 1.0) > 1e-8:
        raise ValueError(f"{name} must sum to 1, got {float(arr.sum())!r}")
    return arr


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with Euclidean norms; in [0,1] for nonnegative inputs."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError(f"vectors must share one dimension, got {av.shape} and {bv.shape}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for a zero-norm vector")
    val = float(av @ bv) / (na * nb)
    # Rounding can push the ratio a few ulp past the mathematical range.
    return min(1.0, max(-1.0, val))


def relevance(set_vectors: list[np.ndarray], q: np.ndarray) -> float:
    """Mean cosine similarity between each vector in the set and the query."""
    if len(set_vectors) == 0:
        raise ValueError("relevance undefined for an empty set")
    return float(np.mean([cosine(v, q) for v in set_vectors]))


def renyi_entropy(p: np.ndarray, alpha_r: float) -> float:
    """Rényi entropy of order ``alpha_r`` in nats.

    Computes ln(sum p_j^alpha) / (1 - alpha); zero entries contribute
    nothing. The order must be positive and not 1 (the Shannon limit is
    out of scope here).
    """
    if not alpha_r > 0 or alpha_r == 1.0:
        raise ValueError(f"alpha_r must be positive and != 1, got {alpha_r}")
    arr = _as_distribution(p)
    return float(np.log(np.power(arr, alpha_r).sum()) / (1.0 - alpha_r))


def jr_divergence(dists: list[np.ndarray], params: JrParams | None = None) -> float:
    """Jensen-Rényi divergence of two or more distributions.

    Entropy of the weighted mixture minus the weighted mean of the
    per-distribution entropies. Nonnegative for orders in (0,1), zero
    exactly when all inputs coincide, and at most ln(n) for n mutually
    disjoint distributions under uniform weights.
    """
    params = params if params is not None else JrParams()
    if len(dists) < 2:
        raise ValueError(f"need at least 2 distributions, got {len(dists)}")
    try:
        mat = np.asarray(dists, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("distributions must share one dimension") from exc
    if mat.ndim != 2:
        raise ValueError("distributions must share one dimension")
    w = params.weight_vector(mat.shape[0])
    mixture = w @ mat
    mean_entropy = sum(
        float(wi) * renyi_entropy(mat[i], params.renyi_order) for i, wi in enumerate(w)
    )
    val = renyi_entropy(mixture, params.renyi_order) - mean_entropy
    # Mathematically >= 0 on this order range; absorb rounding dips.
    if -1e-12 < val < 0.0:
        return 0.0
    return val


def disparity(set_vectors: list[np.ndarray], params: JrParams | None = None) -> float:
    """Document disparity: JR divergence of a set's topic distributions."""
    if len(set_vectors) < 2:
        raise ValueError(
            f"disparity undefined for fewer than 2 documents, got {len(set_vectors)}"
        )
    return jr_divergence(set_vectors, params)


def coherence_from_disparity(dd: float) -> float:
    """Reciprocal disparity, with indistinguishable-from-zero mapped to inf."""
    if dd < 0:
        raise ValueError(f"disparity must be nonnegative, got {dd}")
    return math.inf if dd <= DISPARITY_EPSILON else 1.0 / dd


def coherence(set_vectors: list[np.ndarray], params: JrParams | None = None) -> float:
    """Coherence of a set: 1/disparity, or inf for a zero-disparity set."""
    return coherence_from_disparity(disparity(set_vectors, params))


def informationally_equivalent(s1: float, s2: float, delta: float) -> bool:
    """Whether two relevance scores differ by at most ``delta`` (inclusive)."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    return abs(s1 - s2) <= delta


def _compare_scores(a: SetScore, b: SetScore) -> int:
    if a.relevance > b.relevance + RELEVANCE_TIE_TOLERANCE:
        return -1
    if b.relevance > a.relevance + RELEVANCE_TIE_TOLERANCE:
        return 1
    if a.disparity != b.disparity:
        return -1 if a.disparity < b.disparity else 1
    if a.set_key != b.set_key:
        return -1 if a.set_key < b.set_key else 1
    return 0


def rank_sets(scores: list[SetScore]) -> list[SetScore]:
    """Order sets by descending relevance.

    Relevance ties (within 1e-12) break toward the lower disparity, then
    toward the lexicographically smaller set key, so the result is a
    total order whenever keys are unique.
    """
    if not scores:
        raise ValueError("cannot rank an empty score list")
    return sorted(scores, key=cmp_to_key(_compare_scores))
