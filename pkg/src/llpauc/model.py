"""Matrix-factorization scorer with manual embedding-gradient updates.

Scores are the logistic squash of the user/item dot product, so every
prediction lands in (0, 1). ``apply_score_grads`` chains externally
supplied d(objective)/d(score) values through the logistic derivative
into the embedding tables; there is no autodiff.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "MfModel",
    "init",
    "score",
    "score_items",
    "score_pairs",
    "embedding_grads",
    "apply_score_grads",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class MfModel:
    user_vectors: np.ndarray
    item_vectors: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.user_vectors = np.asarray(self.user_vectors, dtype=np.float64)
        self.item_vectors = np.asarray(self.item_vectors, dtype=np.float64)
        if self.user_vectors.ndim != 2 or self.item_vectors.ndim != 2:
            raise ValueError("embedding tables must be 2-d")
        if self.user_vectors.shape[1] != self.item_vectors.shape[1]:
            raise ValueError("user and item embeddings must share the same dimension")
        if not (np.all(np.isfinite(self.user_vectors)) and np.all(np.isfinite(self.item_vectors))):
            raise ValueError("embedding tables must be finite")

    @property
    def n_users(self) -> int:
        return self.user_vectors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.user_vectors.shape[1]

    def copy(self) -> "MfModel":
        return MfModel(self.user_vectors.copy(), self.item_vectors.copy(), seed=self.seed)


def init(n_users: int, n_items: int, dim: int = 32, scheme: str = "seeded-normal", seed: int = 0, sigma: float = 0.1) -> MfModel:
    """Build an embedding model, reproducibly for a fixed seed.

    scheme="deterministic-small" zeroes both tables (every score is 0.5);
    scheme="seeded-normal" draws N(0, sigma^2) entries, sigma=0.1 default.
    """
    if dim < 1 or n_users < 1 or n_items < 1:
        raise ValueError("n_users, n_items and dim must all be >= 1")
    if scheme == "deterministic-small":
        u = np.zeros((n_users, dim))
        v = np.zeros((n_items, dim))
    elif scheme == "seeded-normal":
        rng = np.random.default_rng(seed)
        u = rng.normal(0.0, sigma, size=(n_users, dim))
        v = rng.normal(0.0, sigma, size=(n_items, dim))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return MfModel(u, v, seed=seed)


def _logistic(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def score(m: MfModel, u: int, i: int) -> float:
    """logistic(user_u . item_i), in (0, 1)."""
    if not (0 <= u < m.n_users and 0 <= i < m.n_items):
        raise IndexError(f"ids out of range: user {u} of {m.n_users}, item {i} of {m.n_items}")
    z = float(m.user_vectors[u] @ m.item_vectors[i])
    return float(_logistic(z))


def score_items(m: MfModel, u: int, items: Sequence[int] | None = None) -> np.ndarray:
    """Scores of one user against many items (all items when omitted)."""
    if not 0 <= u < m.n_users:
        raise IndexError(f"user id {u} out of range")
    table = m.item_vectors if items is None else m.item_vectors[np.asarray(items, dtype=np.intp)]
    return _logistic(table @ m.user_vectors[u])


def score_pairs(m: MfModel, users: Sequence[int], items: Sequence[int]) -> np.ndarray:
    """Scores of aligned (user, item) id arrays."""
    u = np.asarray(users, dtype=np.intp)
    i = np.asarray(items, dtype=np.intp)
    z = np.einsum("ij,ij->i", m.user_vectors[u], m.item_vectors[i])
    return _logistic(z)


def embedding_grads(
    m: MfModel, users: Sequence[int], items: Sequence[int], score_grads: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate d(objective)/d(embedding) tables from per-pair score gradients.

    Chains each d(objective)/d(score) through the logistic derivative
    f * (1 - f) into the counterpart embedding row; contributions of
    duplicated ids sum. Everything is evaluated against the current
    tables.
    """
    users = np.asarray(users, dtype=np.intp)
    items = np.asarray(items, dtype=np.intp)
    grads = np.asarray(score_grads, dtype=np.float64)
    if not (users.shape == items.shape == grads.shape) or users.ndim != 1:
        raise ValueError("users, items and score_grads must be aligned 1-d arrays")
    if not np.all(np.isfinite(grads)):
        raise ValueError("score gradients must be finite")
    if users.size and (
        users.min() < 0 or users.max() >= m.n_users or items.min() < 0 or items.max() >= m.n_items
    ):
        raise IndexError("ids out of range")
    du = np.zeros_like(m.user_vectors)
    di = np.zeros_like(m.item_vectors)
    if users.size:
        f = score_pairs(m, users, items)
        w = grads * f * (1.0 - f)
        np.add.at(du, users, w[:, None] * m.item_vectors[items])
        np.add.at(di, items, w[:, None] * m.user_vectors[users])
    return du, di


def apply_score_grads(
    m: MfModel,
    triples: Iterable[tuple[int, int, float]],
    lr: float,
    direction: str = "descent",
) -> MfModel:
    """Update embeddings from (user, item, d objective / d score) triples.

    The accumulated gradient of ``embedding_grads`` is applied in one
    shot: descent subtracts lr times it, ascent adds it.
    """
    if direction not in ("descent", "ascent"):
        raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    triples = list(triples)
    users = [t[0] for t in triples]
    items = [t[1] for t in triples]
    grads = [t[2] for t in triples]
    du, di = embedding_grads(m, users, items, grads)
    step = -lr if direction == "descent" else lr
    return MfModel(m.user_vectors + step * du, m.item_vectors + step * di, seed=m.seed)


def save_checkpoint(m: MfModel, path: str) -> None:
    """Write the model as JSON: header (sizes, seed) then row-major tables."""
    payload = {
        "n_users": m.n_users,
        "n_items": m.n_items,
        "dim": m.dim,
        "seed": m.seed,
        "user_vectors": m.user_vectors.ravel().tolist(),
        "item_vectors": m.item_vectors.ravel().tolist(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> MfModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    n_users, n_items, dim = payload["n_users"], payload["n_items"], payload["dim"]
    u = np.asarray(payload["user_vectors"], dtype=np.float64).reshape(n_users, dim)
    v = np.asarray(payload["item_vectors"], dtype=np.float64).reshape(n_items, dim)
    return MfModel(u, v, seed=int(payload.get("seed", 0)))
