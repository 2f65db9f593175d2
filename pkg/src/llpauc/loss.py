"""Minimax point-wise surrogate loss for lower-left partial AUC.

The pipeline replaces the pairwise 0/1 ranking indicator with the square
surrogate, decouples it into per-item losses ``ell_plus`` / ``ell_minus``
with auxiliary variables (a, b, gamma), turns the head-selection
indicators into shifted hinge terms over scalar variables s+ / s- (the
average top-k trick), and smooths the hinges with a softplus of
sharpness kappa. ``batch_objective`` evaluates the resulting saddle
objective together with analytic gradients for every variable; no
autodiff is involved. Pairwise BPR and point-wise BCE baselines live
here too.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "LossHyper",
    "DualState",
    "LossValueAndGrads",
    "ScoreLoss",
    "AvgTopKCheck",
    "square_surrogate",
    "ell_plus",
    "ell_minus",
    "softplus_r",
    "batch_objective",
    "clip_dual",
    "avg_topk_identity_check",
    "bpr_loss",
    "bce_loss",
]

_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class LossHyper:
    """Hyperparameters of the saddle objective.

    ``w > 4 * kappa`` keeps the objective strongly concave in gamma,
    which is what legitimizes swapping the min over s- with the max over
    gamma. Defaults: kappa = 5, w = 4 * kappa + 1.
    """

    alpha: float = 0.5
    beta: float = 0.1
    kappa: float = 5.0
    w: float = 21.0

    def __post_init__(self):
        for name, rate in (("alpha", self.alpha), ("beta", self.beta)):
            if not (0.0 < rate <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {rate}")
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.w > 4.0 * self.kappa:
            raise ValueError(f"strong concavity needs w > 4*kappa, got w={self.w}, kappa={self.kappa}")


@dataclass(frozen=True)
class DualState:
    """Auxiliary loss variables.

    a and b live in [0, 1], gamma in [max(-a, b-1), 1], s_plus and
    s_minus on the whole real line. Construction does not validate, so
    that ``clip_dual`` can accept and repair out-of-domain states; use
    ``validate()`` before evaluating the objective.
    """

    a: float = 0.5
    b: float = 0.5
    gamma: float = 0.0
    s_plus: float = 0.0
    s_minus: float = 0.0

    def gamma_bounds(self) -> tuple[float, float]:
        return max(-self.a, self.b - 1.0), 1.0

    def validate(self) -> None:
        vals = (self.a, self.b, self.gamma, self.s_plus, self.s_minus)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"dual state contains non-finite values: {self}")
        if not (0.0 <= self.a <= 1.0 and 0.0 <= self.b <= 1.0):
            raise ValueError(f"a and b must lie in [0, 1], got a={self.a}, b={self.b}")
        lo, hi = self.gamma_bounds()
        if not (lo - _FEAS_TOL <= self.gamma <= hi + _FEAS_TOL):
            raise ValueError(f"gamma={self.gamma} outside [{lo}, {hi}]")

    @classmethod
    def random(cls, rng: np.random.Generator) -> "DualState":
        """Feasible random initialization (interior of the gamma box)."""
        a = float(rng.uniform(0.0, 1.0))
        b = float(rng.uniform(0.0, 1.0))
        lo = max(-a, b - 1.0)
        gamma = float(rng.uniform(lo, 1.0))
        return cls(a=a, b=b, gamma=gamma, s_plus=float(rng.normal()), s_minus=float(rng.normal()))


@dataclass(frozen=True)
class LossValueAndGrads:
    value: float
    grad_scores_pos: np.ndarray
    grad_scores_neg: np.ndarray
    grad_a: float
    grad_b: float
    grad_gamma: float
    grad_s_plus: float
    grad_s_minus: float


@dataclass(frozen=True)
class ScoreLoss:
    """Value plus score gradients only, for the baseline losses."""

    value: float
    grad_scores_pos: np.ndarray
    grad_scores_neg: np.ndarray


def square_surrogate(x: float) -> float:
    """Square surrogate (1 - x)^2 for the pairwise ranking indicator."""
    return (1.0 - x) ** 2


def ell_plus(f, a: float, gamma: float):
    """Per-positive decoupled loss (f - a)^2 - 2(1 + gamma) f.

    Non-increasing in f on [0, 1] whenever gamma >= -a.
    """
    return (f - a) ** 2 - 2.0 * (1.0 + gamma) * f


def ell_minus(f, b: float, gamma: float):
    """Per-negative decoupled loss (f - b)^2 + 2(1 + gamma) f.

    Non-decreasing in f on [0, 1] whenever gamma >= b - 1.
    """
    return (f - b) ** 2 + 2.0 * (1.0 + gamma) * f


def _softplus(z):
    """log(1 + exp(z)) without overflow, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus_r(x, kappa: float):
    """Smooth hinge log(1 + exp(kappa*x)) / kappa, always >= max(0, x).

    Evaluated as max(x, 0) + log1p(exp(-|kappa*x|)) / kappa, which neither
    overflows for large kappa*x nor loses the tail for very negative x.
    """
    if kappa <= 0.0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    res = _softplus(np.asarray(x, dtype=np.float64) * kappa) / kappa
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(res)
    return res


def _check_scores(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d array")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def batch_objective(
    pos_scores: Sequence[float],
    neg_scores: Sequence[float],
    dual: DualState,
    h: LossHyper,
) -> LossValueAndGrads:
    """Saddle objective value and analytic gradients for one batch.

    value = mean_i[ -alpha*s+ - r_k(-ell_plus(f_i) - s+) ]
          + mean_j[  beta*s-  + r_k( ell_minus(f_j) - s-) ]
          - (w + 1) * gamma^2

    Minimized over (scores-producing model, a, b, s-), maximized over
    (gamma, s+). All partial derivatives are closed-form: each softplus
    contributes a sigmoid weight to the chain rule.
    """
    dual.validate()
    pos = _check_scores(pos_scores, "pos_scores")
    neg = _check_scores(neg_scores, "neg_scores")
    a, b, gamma = dual.a, dual.b, dual.gamma
    sp, sm = dual.s_plus, dual.s_minus
    alpha, beta, kappa, w = h.alpha, h.beta, h.kappa, h.w
    n_pos, n_neg = pos.size, neg.size

    lp = ell_plus(pos, a, gamma)
    lm = ell_minus(neg, b, gamma)
    zp = -lp - sp
    zm = lm - sm
    value = float(
        np.mean(-alpha * sp - _softplus(kappa * zp) / kappa)
        + np.mean(beta * sm + _softplus(kappa * zm) / kappa)
        - (w + 1.0) * gamma**2
    )

    sig_p = _sigmoid(kappa * zp)
    sig_m = _sigmoid(kappa * zm)
    grad_pos = sig_p * (2.0 * (pos - a) - 2.0 * (1.0 + gamma)) / n_pos
    grad_neg = sig_m * (2.0 * (neg - b) + 2.0 * (1.0 + gamma)) / n_neg
    grad_a = float(np.mean(sig_p * (-2.0) * (pos - a)))
    grad_b = float(np.mean(sig_m * (-2.0) * (neg - b)))
    grad_gamma = float(
        np.mean(sig_p * (-2.0) * pos) + np.mean(sig_m * 2.0 * neg) - 2.0 * (w + 1.0) * gamma
    )
    grad_s_plus = float(-alpha + np.mean(sig_p))
    grad_s_minus = float(beta - np.mean(sig_m))
    return LossValueAndGrads(
        value=value,
        grad_scores_pos=grad_pos,
        grad_scores_neg=grad_neg,
        grad_a=grad_a,
        grad_b=grad_b,
        grad_gamma=grad_gamma,
        grad_s_plus=grad_s_plus,
        grad_s_minus=grad_s_minus,
    )


def clip_dual(dual: DualState) -> DualState:
    """Project the dual variables back into their domains.

    a and b are clamped to [0, 1] first; gamma is then clamped against
    the box [max(-a, b-1), 1] computed from the clamped a, b. The shift
    variables are unconstrained and pass through.
    """
    a = min(max(dual.a, 0.0), 1.0)
    b = min(max(dual.b, 0.0), 1.0)
    lo = max(-a, b - 1.0)
    gamma = min(max(dual.gamma, lo), 1.0)
    return replace(dual, a=a, b=b, gamma=gamma)


@dataclass(frozen=True)
class AvgTopKCheck:
    """Hard truncated sum vs the variational optimum, with its location."""

    hard_sum: float
    variational_opt: float
    s_opt: float


def avg_topk_identity_check(losses: Sequence[float], rate: float, side: str) -> AvgTopKCheck:
    """Compare a hard head sum of losses against its variational form.

    side="negative-min": the head is the ``rate * n`` largest losses and
    the variational form is min_s [ rate*n*s + sum_j max(0, loss_j - s) ].
    side="positive-max": the head is the ``rate * n`` smallest losses
    (selection by score of a decreasing loss) and the variational form is
    max_s [ -rate*n*s - sum_i max(0, -loss_i - s) ].

    The optimum of either piecewise-linear objective is attained at a
    breakpoint, so it is found exactly by evaluating at every order
    statistic; the canonical optimizer is the rate*n-th order statistic.
    Requires rate * n to be integral.
    """
    arr = np.asarray(losses, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("losses must be a non-empty 1-d array")
    n = arr.size
    k_real = rate * n
    k = int(round(k_real))
    if abs(k_real - k) > 1e-9 or not (1 <= k <= n):
        raise ValueError(f"rate*n must be an integer in [1, n], got {k_real}")

    if side == "negative-min":
        desc = np.sort(arr)[::-1]
        hard = float(desc[:k].sum())
        candidates = arr
        values = k * candidates + np.maximum(0.0, arr[None, :] - candidates[:, None]).sum(axis=1)
        best = float(values.min())
        s_opt = float(desc[k - 1])
    elif side == "positive-max":
        asc = np.sort(arr)
        hard = float(asc[:k].sum())
        candidates = -arr
        values = -k * candidates - np.maximum(0.0, -arr[None, :] - candidates[:, None]).sum(axis=1)
        best = float(values.max())
        s_opt = float(-asc[k - 1])
    else:
        raise ValueError(f"side must be 'positive-max' or 'negative-min', got {side!r}")
    return AvgTopKCheck(hard_sum=hard, variational_opt=best, s_opt=s_opt)


def bpr_loss(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> ScoreLoss:
    """Pairwise log-sigmoid ranking loss, mean over paired (pos, neg) scores."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape or pos.ndim != 1 or pos.size == 0:
        raise ValueError("bpr_loss needs equal-length non-empty paired batches")
    d = pos - neg
    value = float(np.mean(_softplus(-d)))
    weight = _sigmoid(-d) / pos.size
    return ScoreLoss(value=value, grad_scores_pos=-weight, grad_scores_neg=weight)


def bce_loss(pos_scores: Sequence[float], neg_scores: Sequence[float], eps: float = 1e-12) -> ScoreLoss:
    """Binary cross-entropy on scores already in (0, 1), mean over all items."""
    pos = np.clip(np.asarray(pos_scores, dtype=np.float64), eps, 1.0 - eps)
    neg = np.clip(np.asarray(neg_scores, dtype=np.float64), eps, 1.0 - eps)
    if pos.ndim != 1 or neg.ndim != 1 or pos.size == 0 or neg.size == 0:
        raise ValueError("bce_loss needs non-empty 1-d score batches")
    n = pos.size + neg.size
    value = float((-np.log(pos).sum() - np.log1p(-neg).sum()) / n)
    return ScoreLoss(
        value=value,
        grad_scores_pos=-1.0 / (pos * n),
        grad_scores_neg=1.0 / ((1.0 - neg) * n),
    )
