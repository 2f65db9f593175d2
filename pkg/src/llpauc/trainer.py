"""Stochastic gradient descent-ascent training for the saddle loss.

Each step descends the minimization block (embeddings, a, b, s-) and
ascends the maximization block (gamma, s+) with the same learning rate,
then projects the auxiliary variables back into their domains. The pure
gradient step is the default; Adam is available as a config option.
Model selection is by validation Recall@K or NDCG@K under full ranking.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import model as model_mod
from .data import InteractionTable, SplitResult
from .loss import DualState, LossHyper, batch_objective, bce_loss, bpr_loss, clip_dual
from .metrics import LabeledScores, mean_over_users, topk_metrics
from .model import MfModel

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "EpochRecord",
    "Batch",
    "EvalReport",
    "sample_batch",
    "epoch_batches",
    "sgda_step",
    "train",
    "evaluate_full_ranking",
]

LLPAUC_FAMILY = ("llpauc", "auc-ablation", "opauc-ablation")
LOSS_KINDS = LLPAUC_FAMILY + ("bpr", "bce")


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "llpauc"
    alpha: float = 0.5
    beta: float = 0.1
    kappa: float = 5.0
    w: float = 21.0
    lr: float = 0.001
    batch_size: int = 128
    neg_per_pos: int = 100
    epochs: int = 30
    seed: int = 0
    eval_k: int = 20
    select_metric: str = "recall"
    optimizer: str = "sgda"
    dim: int = 32
    patience: int = 10
    dual_init: str = "deterministic"
    progress: bool = True

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.select_metric not in ("recall", "ndcg"):
            raise ValueError(f"select_metric must be 'recall' or 'ndcg', got {self.select_metric!r}")
        if self.optimizer not in ("sgda", "adam"):
            raise ValueError(f"optimizer must be 'sgda' or 'adam', got {self.optimizer!r}")
        if self.dual_init not in ("deterministic", "random"):
            raise ValueError(f"dual_init must be 'deterministic' or 'random', got {self.dual_init!r}")
        if self.lr < 0 or self.batch_size < 1 or self.neg_per_pos < 1 or self.epochs < 0:
            raise ValueError("lr must be >= 0 and batch_size/neg_per_pos/epochs positive")
        if self.eval_k < 1 or self.dim < 1 or self.patience < 1:
            raise ValueError("eval_k, dim and patience must be >= 1")
        if self.loss_kind in LLPAUC_FAMILY and not self.w > 4.0 * self.kappa:
            raise ValueError(f"strong concavity needs w > 4*kappa, got w={self.w}, kappa={self.kappa}")

    def effective_rates(self) -> tuple[float, float]:
        """(alpha, beta) after applying the ablation identities."""
        if self.loss_kind == "auc-ablation":
            return 1.0, 1.0
        if self.loss_kind == "opauc-ablation":
            return 1.0, self.beta
        return self.alpha, self.beta

    def hyper(self) -> LossHyper:
        a, b = self.effective_rates()
        return LossHyper(alpha=a, beta=b, kappa=self.kappa, w=self.w)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    val_recall: float
    val_ndcg: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,objective,val_recall,val_ndcg,wall_time"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.objective!r},{r.val_recall!r},{r.val_ndcg!r},{r.wall_time!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "records": [
                {
                    "epoch": r.epoch,
                    "objective": r.objective,
                    "val_recall": r.val_recall,
                    "val_ndcg": r.val_ndcg,
                    "wall_time": r.wall_time,
                }
                for r in self.records
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class Batch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray  # shape (len(users), neg_per_pos)


class _TrainSet:
    """Training pairs plus the per-user positive sets used to reject negatives."""

    def __init__(self, table: InteractionTable):
        self.n_users = table.n_users
        self.n_items = table.n_items
        self.users = table.u.copy()
        self.items = table.i.copy()
        self.pos_matrix = np.zeros((self.n_users, self.n_items), dtype=bool)
        self.pos_matrix[self.users, self.items] = True
        counts = self.pos_matrix.sum(axis=1)
        full = np.flatnonzero(counts >= self.n_items)
        if full.size:
            raise ValueError(f"users {full.tolist()} have every item as a training positive")

    @property
    def n_pairs(self) -> int:
        return int(self.users.size)


def _draw_negatives(ts: _TrainSet, users: np.ndarray, neg_per_pos: int, rng: np.random.Generator) -> np.ndarray:
    cand = rng.integers(0, ts.n_items, size=(users.size, neg_per_pos))
    bad = ts.pos_matrix[users[:, None], cand]
    while bad.any():
        rows, cols = np.nonzero(bad)
        cand[rows, cols] = rng.integers(0, ts.n_items, size=rows.size)
        bad = np.zeros_like(bad)
        bad[rows, cols] = ts.pos_matrix[users[rows], cand[rows, cols]]
    return cand


def epoch_batches(
    train: InteractionTable | _TrainSet,
    batch_size: int,
    neg_per_pos: int,
    rng: np.random.Generator,
) -> Iterator[Batch]:
    """One shuffled pass over the training positives, in mini-batches.

    Positives appear exactly once per pass; negatives are drawn uniformly
    per positive from the user's non-positive items (with replacement
    across draws).
    """
    ts = train if isinstance(train, _TrainSet) else _TrainSet(train)
    order = rng.permutation(ts.n_pairs)
    for start in range(0, ts.n_pairs, batch_size):
        sel = order[start : start + batch_size]
        users = ts.users[sel]
        pos_items = ts.items[sel]
        neg_items = _draw_negatives(ts, users, neg_per_pos, rng)
        yield Batch(users=users, pos_items=pos_items, neg_items=neg_items)


def sample_batch(
    train: InteractionTable,
    batch_size: int,
    neg_per_pos: int,
    rng: np.random.Generator,
) -> Batch:
    """First mini-batch of a fresh shuffled pass (deterministic per rng state)."""
    return next(epoch_batches(train, batch_size, neg_per_pos, rng))


def _batch_scores(m: MfModel, batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pos_scores = model_mod.score_pairs(m, batch.users, batch.pos_items)
    npp = batch.neg_items.shape[1]
    neg_users = np.repeat(batch.users, npp)
    neg_items = batch.neg_items.ravel()
    neg_scores = model_mod.score_pairs(m, neg_users, neg_items)
    return pos_scores, neg_scores, neg_users, neg_items


def _score_gradients(
    m: MfModel, batch: Batch, dual: DualState | None, config: TrainConfig
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray, object]:
    """Objective value, (users, items, score-grads) triples and the raw loss result."""
    pos_scores, neg_scores, neg_users, neg_items = _batch_scores(m, batch)
    if config.loss_kind in LLPAUC_FAMILY:
        res = batch_objective(pos_scores, neg_scores, dual, config.hyper())
        gp, gn = res.grad_scores_pos, res.grad_scores_neg
    elif config.loss_kind == "bpr":
        npp = batch.neg_items.shape[1]
        res = bpr_loss(np.repeat(pos_scores, npp), neg_scores)
        gp = np.add.reduceat(res.grad_scores_pos, np.arange(0, neg_scores.size, npp))
        gn = res.grad_scores_neg
    else:
        res = bce_loss(pos_scores, neg_scores)
        gp, gn = res.grad_scores_pos, res.grad_scores_neg
    if not math.isfinite(res.value):
        raise RuntimeError(
            f"non-finite objective {res.value} (loss={config.loss_kind}, dual={dual}, "
            f"score range pos=[{pos_scores.min()}, {pos_scores.max()}], "
            f"neg=[{neg_scores.min()}, {neg_scores.max()}])"
        )
    users = np.concatenate([batch.users, neg_users])
    items = np.concatenate([batch.pos_items, neg_items])
    grads = np.concatenate([gp, gn])
    return res.value, users, items, grads, pos_scores, res


def sgda_step(
    m: MfModel, dual: DualState | None, batch: Batch, config: TrainConfig
) -> tuple[MfModel, DualState | None, float]:
    """One plain gradient descent-ascent step.

    Descends the embeddings together with (a, b, s-), ascends (gamma, s+),
    both with step lr, then projects the dual variables. For the baseline
    losses only the embeddings move and ``dual`` passes through.
    """
    value, users, items, grads, _, res = _score_gradients(m, batch, dual, config)
    triples = list(zip(users.tolist(), items.tolist(), grads.tolist()))
    new_model = model_mod.apply_score_grads(m, triples, config.lr, direction="descent")
    if config.loss_kind in LLPAUC_FAMILY:
        lr = config.lr
        new_dual = DualState(
            a=dual.a - lr * res.grad_a,
            b=dual.b - lr * res.grad_b,
            gamma=dual.gamma + lr * res.grad_gamma,
            s_plus=dual.s_plus + lr * res.grad_s_plus,
            s_minus=dual.s_minus - lr * res.grad_s_minus,
        )
        new_dual = clip_dual(new_dual)
    else:
        new_dual = dual
    return new_model, new_dual, value


class _Adam:
    """Adam moments for one parameter array (or scalar)."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def delta(self, grad, lr):
        """Update moments and return the step to subtract (descent direction)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * np.square(grad)
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return lr * mhat / (np.sqrt(vhat) + self.eps)


class _AdamStepper:
    """Adam variant of the descent-ascent step; ascent feeds negated gradients."""

    def __init__(self, m: MfModel, with_dual: bool):
        self.user_opt = _Adam(m.user_vectors.shape)
        self.item_opt = _Adam(m.item_vectors.shape)
        self.dual_opts = {name: _Adam(()) for name in ("a", "b", "gamma", "s_plus", "s_minus")} if with_dual else None

    def step(
        self, m: MfModel, dual: DualState | None, batch: Batch, config: TrainConfig
    ) -> tuple[MfModel, DualState | None, float]:
        value, users, items, grads, _, res = _score_gradients(m, batch, dual, config)
        du, di = model_mod.embedding_grads(m, users, items, grads)
        new_model = MfModel(
            m.user_vectors - self.user_opt.delta(du, config.lr),
            m.item_vectors - self.item_opt.delta(di, config.lr),
            seed=m.seed,
        )
        if config.loss_kind in LLPAUC_FAMILY:
            o = self.dual_opts
            new_dual = DualState(
                a=dual.a - float(o["a"].delta(res.grad_a, config.lr)),
                b=dual.b - float(o["b"].delta(res.grad_b, config.lr)),
                gamma=dual.gamma - float(o["gamma"].delta(-res.grad_gamma, config.lr)),
                s_plus=dual.s_plus - float(o["s_plus"].delta(-res.grad_s_plus, config.lr)),
                s_minus=dual.s_minus - float(o["s_minus"].delta(res.grad_s_minus, config.lr)),
            )
            new_dual = clip_dual(new_dual)
        else:
            new_dual = dual
        return new_model, new_dual, value


@dataclass
class EvalReport:
    """Macro-averaged Top-K metrics over users under full ranking."""

    per_k: dict
    n_users_evaluated: int
    n_users_skipped: int

    def metric(self, k: int, name: str) -> float:
        return self.per_k[k][name]

    def to_dict(self) -> dict:
        return {
            "per_k": {str(k): dict(v) for k, v in self.per_k.items()},
            "n_users_evaluated": self.n_users_evaluated,
            "n_users_skipped": self.n_users_skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_full_ranking(
    m: MfModel,
    heldout_by_user: Sequence[np.ndarray],
    k_list: Sequence[int] = (20,),
    exclude_by_user: Sequence[np.ndarray] | None = None,
) -> EvalReport:
    """Rank every non-excluded item per user and score the heldout positives.

    ``heldout_by_user[u]`` holds the positive item ids of user u (empty
    arrays mark users to skip); ``exclude_by_user[u]`` holds items left
    out of the candidate ranking (the training positives). Metrics are
    macro-averaged over evaluated users.
    """
    k_list = [int(k) for k in k_list]
    if not k_list or min(k_list) < 1:
        raise ValueError("k_list must hold positive integers")
    acc = {k: {"recall": [], "precision": [], "ndcg": []} for k in k_list}
    skipped = 0
    evaluated = 0
    all_items = np.arange(m.n_items)
    for u in range(m.n_users):
        held = np.asarray(heldout_by_user[u], dtype=np.int64) if u < len(heldout_by_user) else np.empty(0, dtype=np.int64)
        if held.size == 0:
            skipped += 1
            continue
        exclude = (
            np.asarray(exclude_by_user[u], dtype=np.int64)
            if exclude_by_user is not None and u < len(exclude_by_user)
            else np.empty(0, dtype=np.int64)
        )
        held = np.unique(held)
        keep = np.ones(m.n_items, dtype=bool)
        keep[exclude] = False
        keep[held] = True
        candidates = all_items[keep]
        scores = model_mod.score_items(m, u)
        is_held = np.zeros(m.n_items, dtype=bool)
        is_held[held] = True
        pos_items = candidates[is_held[candidates]]
        neg_items = candidates[~is_held[candidates]]
        s = LabeledScores(pos_scores=scores[pos_items], neg_scores=scores[neg_items])
        for k in k_list:
            rep = topk_metrics(s, k)
            acc[k]["recall"].append(rep.recall)
            acc[k]["precision"].append(rep.precision)
            acc[k]["ndcg"].append(rep.ndcg)
        evaluated += 1
    if evaluated == 0:
        raise ValueError("no user had heldout positives to evaluate")
    per_k = {
        k: {name: mean_over_users(vals) for name, vals in acc[k].items()} for k in k_list
    }
    return EvalReport(per_k=per_k, n_users_evaluated=evaluated, n_users_skipped=skipped)


def _heldout_lists(table: InteractionTable) -> list:
    return table.positives_by_user()


def train(split: SplitResult, config: TrainConfig) -> tuple[MfModel, TrainHistory]:
    """Run the training loop and return the best-validation checkpoint.

    Deterministic for a fixed (dataset, config) under serial execution;
    wall times in the history are informational only. Stops early after
    ``config.patience`` epochs without improvement of the selection
    metric.
    """
    if split.val.n_records == 0:
        raise ValueError("validation set is empty")
    ss = np.random.SeedSequence(config.seed)
    model_seed, sampler_seed, dual_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    m = model_mod.init(
        split.train.n_users, split.train.n_items, dim=config.dim, scheme="seeded-normal", seed=model_seed
    )
    if config.loss_kind in LLPAUC_FAMILY:
        if config.dual_init == "random":
            dual = DualState.random(np.random.default_rng(dual_seed))
        else:
            dual = DualState()
    else:
        dual = None

    history = TrainHistory()
    if config.epochs == 0:
        return m, history

    ts = _TrainSet(split.train)
    rng = np.random.default_rng(sampler_seed)
    train_pos = split.train.positives_by_user()
    val_held = _heldout_lists(split.val)
    stepper = _AdamStepper(m, with_dual=dual is not None) if config.optimizer == "adam" else None

    best_value = -math.inf
    best_model = m.copy()
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        values = []
        for batch in epoch_batches(ts, config.batch_size, config.neg_per_pos, rng):
            if stepper is None:
                m, dual, value = sgda_step(m, dual, batch, config)
            else:
                m, dual, value = stepper.step(m, dual, batch, config)
            values.append(value)
        report = evaluate_full_ranking(m, val_held, [config.eval_k], exclude_by_user=train_pos)
        rec = EpochRecord(
            epoch=epoch,
            objective=float(np.mean(values)),
            val_recall=report.metric(config.eval_k, "recall"),
            val_ndcg=report.metric(config.eval_k, "ndcg"),
            wall_time=time.perf_counter() - t0,
        )
        history.records.append(rec)
        if config.progress:
            print(
                f"epoch {rec.epoch}: objective={rec.objective:.6f} "
                f"val-recall@{config.eval_k}={rec.val_recall:.4f} "
                f"val-ndcg@{config.eval_k}={rec.val_ndcg:.4f}"
            )
        selected = rec.val_recall if config.select_metric == "recall" else rec.val_ndcg
        if selected > best_value:
            best_value = selected
            history.best_epoch = epoch
            best_model = m.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best_model, history
