"""Exact ranking metrics: AUC, partial-AUC variants, and Top-K measures.

All estimators are deterministic pure functions of per-user score lists.
Partial variants restrict the pairwise comparison to the highest-scored
head of the positive and/or negative lists; ranking ties are broken by
original list position so every result is reproducible bit-for-bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "LabeledScores",
    "PartialAucParams",
    "TopKReport",
    "head_count",
    "select_head",
    "auc",
    "opauc",
    "llpauc",
    "topk_metrics",
    "mean_over_users",
]


@dataclass(frozen=True)
class LabeledScores:
    """Prediction scores of one user's positive and negative items.

    Both lists must be non-empty with every value in [0, 1].
    """

    pos_scores: np.ndarray
    neg_scores: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.pos_scores, dtype=np.float64)
        neg = np.asarray(self.neg_scores, dtype=np.float64)
        if pos.ndim != 1 or neg.ndim != 1:
            raise ValueError("score lists must be one-dimensional")
        if pos.size == 0 or neg.size == 0:
            raise ValueError("positive and negative score lists must be non-empty")
        for name, arr in (("pos_scores", pos), ("neg_scores", neg)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "pos_scores", pos)
        object.__setattr__(self, "neg_scores", neg)

    @property
    def n_pos(self) -> int:
        return int(self.pos_scores.size)

    @property
    def n_neg(self) -> int:
        return int(self.neg_scores.size)


@dataclass(frozen=True)
class PartialAucParams:
    """Rate pair (alpha, beta) bounding TPR and FPR, each in (0, 1]."""

    alpha: float
    beta: float

    def __post_init__(self):
        for name, rate in (("alpha", self.alpha), ("beta", self.beta)):
            if not (0.0 < rate <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {rate}")


@dataclass(frozen=True)
class TopKReport:
    """Top-K metrics of a single ranked list.

    ``hits`` is the integer positive count inside the top K; it makes the
    rational identity precision*k == recall*n_pos checkable without
    floating-point division noise.
    """

    k: int
    recall: float
    precision: float
    ndcg: float
    hits: int


def head_count(n: int, rate: float) -> int:
    """Number of items kept when a rate in (0, 1] is applied to n items.

    Uses round-half-up on rate*n, clamped to [1, n]; rate = 1 keeps all n.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    k = int(math.floor(rate * n + 0.5))
    return min(max(k, 1), n)


def select_head(scores: Sequence[float], rate: float) -> np.ndarray:
    """The ``head_count(len(scores), rate)`` largest scores.

    Ties are broken by original list index (earlier index wins), so the
    selection is deterministic. Returned in descending score order.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("scores must be non-empty")
    k = head_count(arr.size, rate)
    order = np.argsort(-arr, kind="stable")
    return arr[order[:k]]


def llpauc(s: LabeledScores, p: PartialAucParams) -> float:
    """Lower-left partial AUC at TPR <= alpha, FPR <= beta.

    Counts strictly-winning pairs between the alpha-head of the positives
    and the beta-head of the negatives, normalized by n_pos * n_neg, so
    the value lies in [0, alpha * beta] (up to head rounding). Ties
    contribute nothing.
    """
    pos_head = select_head(s.pos_scores, p.alpha)
    neg_head = select_head(s.neg_scores, p.beta)
    wins = int(np.count_nonzero(pos_head[:, None] > neg_head[None, :]))
    return wins / (s.n_pos * s.n_neg)


def opauc(s: LabeledScores, beta: float) -> float:
    """One-way partial AUC at FPR <= beta: all positives vs the negative head."""
    neg_head = select_head(s.neg_scores, beta)
    wins = int(np.count_nonzero(s.pos_scores[:, None] > neg_head[None, :]))
    return wins / (s.n_pos * s.n_neg)


def auc(s: LabeledScores) -> float:
    """Fraction of (positive, negative) pairs where the positive scores strictly higher."""
    wins = int(np.count_nonzero(s.pos_scores[:, None] > s.neg_scores[None, :]))
    return wins / (s.n_pos * s.n_neg)


def topk_metrics(s: LabeledScores, k: int) -> TopKReport:
    """Recall@K, Precision@K and NDCG@K of the combined ranked list.

    Items are ranked by score descending; ties are broken by global index
    in the concatenated positives-then-negatives list (lower index first).
    NDCG uses binary gains with the 1/log2(rank + 1) discount and an ideal
    DCG over min(k, n_pos) ranks.
    """
    n_pos, n_neg = s.n_pos, s.n_neg
    if not (1 <= k <= n_pos + n_neg):
        raise ValueError(f"k must lie in [1, {n_pos + n_neg}], got {k}")
    scores = np.concatenate([s.pos_scores, s.neg_scores])
    is_pos = np.zeros(n_pos + n_neg, dtype=bool)
    is_pos[:n_pos] = True
    order = np.argsort(-scores, kind="stable")
    top_labels = is_pos[order[:k]]
    hits = int(np.count_nonzero(top_labels))

    ranks = np.arange(1, k + 1, dtype=np.float64)
    gains = 1.0 / np.log2(ranks + 1.0)
    dcg = float(gains[top_labels].sum())
    ideal = min(k, n_pos)
    idcg = float(gains[:ideal].sum())
    return TopKReport(
        k=k,
        recall=hits / n_pos,
        precision=hits / k,
        ndcg=dcg / idcg,
        hits=hits,
    )


def mean_over_users(per_user_values: Sequence[float]) -> float:
    """Arithmetic mean of per-user metric values; rejects empty input."""
    arr = np.asarray(per_user_values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("per_user_values must be non-empty")
    return float(arr.mean())
