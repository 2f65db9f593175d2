"""Top-K bound functions for partial-AUC values and their verification.

Two bound families map a partial-AUC value at rates alpha = K/n_pos,
beta = K/n_neg into floor/ceil sandwiches on Recall@K and Precision@K:
the lower-left family (G functions) and the one-way family (H functions).
``verify_bounds_exhaustive`` checks both, plus the claim that the G
sandwich is never looser than the H sandwich, over every label
arrangement of a given size. ``simulate_correlation`` runs the Monte
Carlo study correlating the lower-left metric with Recall@K over random
rankings.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .metrics import LabeledScores, PartialAucParams, head_count, llpauc, opauc, topk_metrics

__all__ = [
    "BoundPair",
    "BoundVerification",
    "CorrelationGrid",
    "g_lower",
    "g_higher",
    "h_lower",
    "h_higher",
    "recall_bounds_llpauc",
    "precision_bounds_llpauc",
    "recall_bounds_opauc",
    "verify_bounds_exhaustive",
    "pearson",
    "default_rate_grid",
    "simulate_correlation",
]

# Relative slack for snapping floating-point roundoff; genuinely
# infeasible metric values still raise.
_SNAP = 1e-9

ENUMERATION_GUARD = 10**6


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float


def _snap(x: float) -> float:
    """Snap x to the nearest integer when within roundoff of it."""
    r = round(x)
    if abs(x - r) <= _SNAP * max(1.0, abs(x)):
        return float(r)
    return x


def _checked_radicand(rad: float, scale: float, what: str) -> float:
    if rad < 0.0:
        if rad >= -_SNAP * max(1.0, scale):
            return 0.0
        raise ValueError(f"infeasible metric value: {what} radicand is {rad}")
    return rad


def g_lower(v: float, k: int, n_pos: int, n_neg: int) -> float:
    """Pre-rounding lower bound K - sqrt(K^2 - n_pos*n_neg*v)."""
    prod = n_pos * n_neg * v
    rad = _checked_radicand(k * k - prod, k * k, "lower-left lower-bound")
    return k - math.sqrt(rad)


def g_higher(v: float, k: int, n_pos: int, n_neg: int) -> float:
    """Pre-rounding upper bound sqrt(n_pos*n_neg*v)."""
    prod = _checked_radicand(n_pos * n_neg * v, 1.0, "upper-bound")
    return math.sqrt(prod)


def h_lower(v: float, k: int, n_pos: int, n_neg: int) -> float:
    """Pre-rounding one-way lower bound (n_pos+K - sqrt((n_pos+K)^2 - 4*n_pos*n_neg*v)) / 2."""
    m = n_pos + k
    rad = _checked_radicand(m * m - 4.0 * n_pos * n_neg * v, m * m, "one-way lower-bound")
    return (m - math.sqrt(rad)) / 2.0


def h_higher(v: float, k: int, n_pos: int, n_neg: int) -> float:
    """Pre-rounding one-way upper bound, identical in form to ``g_higher``."""
    return g_higher(v, k, n_pos, n_neg)


def _check_sizes(k: int, n_pos: int, n_neg: int) -> None:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if n_pos <= k or n_neg <= k:
        raise ValueError(f"bounds require n_pos > K and n_neg > K, got ({n_pos}, {n_neg}, K={k})")


def _floor_int(x: float) -> int:
    return int(math.floor(_snap(x)))


def _ceil_int(x: float) -> int:
    return int(math.ceil(_snap(x)))


def recall_bounds_llpauc(v: float, k: int, n_pos: int, n_neg: int) -> BoundPair:
    """Sandwich on Recall@K implied by the lower-left metric at alpha=K/n_pos, beta=K/n_neg."""
    _check_sizes(k, n_pos, n_neg)
    lo = _floor_int(g_lower(v, k, n_pos, n_neg))
    hi = _ceil_int(g_higher(v, k, n_pos, n_neg))
    return BoundPair(lower=lo / n_pos, upper=hi / n_pos)


def precision_bounds_llpauc(v: float, k: int, n_pos: int, n_neg: int) -> BoundPair:
    """Sandwich on Precision@K; same integer bounds as recall, divided by K."""
    _check_sizes(k, n_pos, n_neg)
    lo = _floor_int(g_lower(v, k, n_pos, n_neg))
    hi = _ceil_int(g_higher(v, k, n_pos, n_neg))
    return BoundPair(lower=lo / k, upper=hi / k)


def recall_bounds_opauc(v: float, k: int, n_pos: int, n_neg: int) -> BoundPair:
    """Sandwich on Recall@K implied by the one-way metric at beta=K/n_neg."""
    _check_sizes(k, n_pos, n_neg)
    lo = _floor_int(h_lower(v, k, n_pos, n_neg))
    hi = _ceil_int(h_higher(v, k, n_pos, n_neg))
    return BoundPair(lower=lo / n_pos, upper=hi / n_pos)


@dataclass
class BoundVerification:
    """Outcome of exhaustively checking every label arrangement."""

    n_pos: int
    n_neg: int
    k: int
    arrangements_checked: int = 0
    recall_violations: int = 0
    precision_violations: int = 0
    tightness_violations: int = 0
    ordering_violations: int = 0
    examples: list = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return (
            self.recall_violations
            + self.precision_violations
            + self.tightness_violations
            + self.ordering_violations
        )

    def to_dict(self) -> dict:
        return {
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "k": self.k,
            "arrangements_checked": self.arrangements_checked,
            "recall_violations": self.recall_violations,
            "precision_violations": self.precision_violations,
            "tightness_violations": self.tightness_violations,
            "ordering_violations": self.ordering_violations,
            "total_violations": self.total_violations,
            "examples": self.examples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def verify_bounds_exhaustive(n_pos: int, n_neg: int, k: int, max_examples: int = 20) -> BoundVerification:
    """Check the bound sandwiches on every binary label arrangement.

    Scores are assigned strictly decreasing by rank position, so the check
    isolates the combinatorial claim from tie handling. For each
    arrangement we verify that (a) the recall sandwich and (b) the
    precision sandwich hold, (c) the pre-rounding G interval sits inside
    the H interval, and (d) the one-way metric dominates the lower-left
    metric.
    """
    _check_sizes(k, n_pos, n_neg)
    total = math.comb(n_pos + n_neg, n_pos)
    if total > ENUMERATION_GUARD:
        raise ValueError(f"{total} arrangements exceed the enumeration guard of {ENUMERATION_GUARD}")

    n = n_pos + n_neg
    all_scores = (n - np.arange(n, dtype=np.float64)) / n
    alpha = k / n_pos
    beta = k / n_neg
    params = PartialAucParams(alpha=alpha, beta=beta)

    report = BoundVerification(n_pos=n_pos, n_neg=n_neg, k=k)
    for pos_positions in combinations(range(n), n_pos):
        pos_mask = np.zeros(n, dtype=bool)
        pos_mask[list(pos_positions)] = True
        s = LabeledScores(pos_scores=all_scores[pos_mask], neg_scores=all_scores[~pos_mask])

        v_ll = llpauc(s, params)
        v_op = opauc(s, beta)
        hits = topk_metrics(s, k).hits

        g_lo = g_lower(v_ll, k, n_pos, n_neg)
        g_hi = g_higher(v_ll, k, n_pos, n_neg)
        h_lo = h_lower(v_op, k, n_pos, n_neg)
        h_hi = h_higher(v_op, k, n_pos, n_neg)

        recall_pair = recall_bounds_llpauc(v_ll, k, n_pos, n_neg)
        precision_pair = precision_bounds_llpauc(v_ll, k, n_pos, n_neg)
        bad = []
        if not (recall_pair.lower <= hits / n_pos <= recall_pair.upper):
            report.recall_violations += 1
            bad.append("recall")
        if not (precision_pair.lower <= hits / k <= precision_pair.upper):
            report.precision_violations += 1
            bad.append("precision")
        if h_lo > g_lo + _SNAP or g_hi > h_hi + _SNAP:
            report.tightness_violations += 1
            bad.append("tightness")
        if v_op < v_ll:
            report.ordering_violations += 1
            bad.append("ordering")

        if bad and len(report.examples) < max_examples:
            report.examples.append(
                {
                    "positive_positions": list(pos_positions),
                    "failed_checks": bad,
                    "llpauc": v_ll,
                    "opauc": v_op,
                    "hits": hits,
                    "g_lower": g_lo,
                    "g_higher": g_hi,
                    "h_lower": h_lo,
                    "h_higher": h_hi,
                }
            )
        report.arrangements_checked += 1
    return report


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; NaN marks zero variance in either input."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise ValueError(f"length mismatch: {xa.shape} vs {ya.shape}")
    if xa.ndim != 1 or xa.size < 2:
        raise ValueError("pearson needs two equal-length 1-d samples of size >= 2")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return float("nan")
    r = float(dx @ dy) / (sx * sy)
    return min(1.0, max(-1.0, r))


@dataclass
class CorrelationGrid:
    """Pearson correlation between the lower-left metric and Recall@K per (alpha, beta) cell."""

    alphas: list
    betas: list
    k: int
    corr: np.ndarray
    n_pos: int
    n_neg: int
    n_samples: int
    seed: int

    def __post_init__(self):
        self.corr = np.asarray(self.corr, dtype=np.float64)
        if self.corr.shape != (len(self.alphas), len(self.betas)):
            raise ValueError("corr shape must be (len(alphas), len(betas))")

    def argmax_cell(self) -> tuple[int, int]:
        """Indices of the highest-correlation cell (NaN cells ignored)."""
        masked = np.where(np.isnan(self.corr), -np.inf, self.corr)
        idx = int(np.argmax(masked))
        return idx // len(self.betas), idx % len(self.betas)

    def cell(self, alpha: float, beta: float) -> float:
        ai = self.alphas.index(alpha)
        bi = self.betas.index(beta)
        return float(self.corr[ai, bi])

    def to_csv(self) -> str:
        lines = ["alpha\\beta," + ",".join(repr(b) for b in self.betas)]
        for ai, a in enumerate(self.alphas):
            lines.append(repr(a) + "," + ",".join(repr(float(c)) for c in self.corr[ai]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        corr = [[None if math.isnan(c) else float(c) for c in row] for row in self.corr]
        return {
            "alphas": [float(a) for a in self.alphas],
            "betas": [float(b) for b in self.betas],
            "k": self.k,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "corr": corr,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def default_rate_grid(lo: float, num: int) -> list:
    """Logarithmically spaced rates from lo up to and including 1.0."""
    if not (0.0 < lo < 1.0) or num < 2:
        raise ValueError("need 0 < lo < 1 and num >= 2")
    return [float(v) for v in np.geomspace(lo, 1.0, num)]


def _rank_stats(pos_ranks: np.ndarray) -> np.ndarray:
    """Per-positive count of negatives ranked above it, from sorted positive ranks."""
    return pos_ranks - np.arange(pos_ranks.size)


def simulate_correlation(
    n_pos: int,
    n_neg: int,
    n_samples: int,
    k: int,
    alphas: Sequence[float],
    betas: Sequence[float],
    seed: int,
) -> CorrelationGrid:
    """Monte Carlo correlation study over uniformly random rankings.

    Draws ``n_samples`` random permutations of the n_pos + n_neg items
    (equivalently, score vectors with distinct values), evaluates
    Recall@K and the lower-left metric at every (alpha, beta) cell on the
    shared samples, and fills the grid with per-cell Pearson
    coefficients. Deterministic for a fixed seed.
    """
    if n_pos <= k:
        raise ValueError(f"simulation requires n_pos > K, got n_pos={n_pos}, K={k}")
    if k < 1 or n_neg < 1:
        raise ValueError("K and n_neg must be >= 1")
    if n_samples < 2:
        raise ValueError("need at least two samples for a correlation")
    alphas = [float(a) for a in alphas]
    betas = [float(b) for b in betas]
    if not alphas or not betas:
        raise ValueError("alpha and beta grids must be non-empty")
    for rate in alphas + betas:
        if not (0.0 < rate <= 1.0):
            raise ValueError(f"grid rates must lie in (0, 1], got {rate}")

    rng = np.random.default_rng(seed)
    n = n_pos + n_neg
    # negatives_above[s, i]: negatives ranked above the i-th best positive of sample s
    negatives_above = np.empty((n_samples, n_pos), dtype=np.int64)
    recall_vals = np.empty(n_samples, dtype=np.float64)
    for si in range(n_samples):
        pos_ranks = np.sort(rng.permutation(n)[:n_pos])
        negatives_above[si] = _rank_stats(pos_ranks)
        recall_vals[si] = np.count_nonzero(pos_ranks < k) / n_pos

    denom = float(n_pos * n_neg)
    corr = np.empty((len(alphas), len(betas)), dtype=np.float64)
    for ai, a in enumerate(alphas):
        kp = head_count(n_pos, a)
        head = negatives_above[:, :kp]
        for bi, b in enumerate(betas):
            kn = head_count(n_neg, b)
            wins = np.maximum(0, kn - head).sum(axis=1)
            corr[ai, bi] = pearson(wins / denom, recall_vals)
    return CorrelationGrid(
        alphas=alphas,
        betas=betas,
        k=k,
        corr=corr,
        n_pos=n_pos,
        n_neg=n_neg,
        n_samples=n_samples,
        seed=seed,
    )
