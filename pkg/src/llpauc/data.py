"""Interaction ingestion, deterministic splitting, and synthetic data.

Tables keep raw string ids alongside dense integer ids; splits of a
table share its id maps so user/item indices stay consistent across
train/val/test. The noise protocol reuses the clean split of the same
seed for the test set and injects the below-threshold records into
train/val only.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "InteractionTable",
    "SplitSpec",
    "SplitResult",
    "SyntheticData",
    "load_interactions",
    "write_interactions",
    "make_split",
    "write_split",
    "synth_generate",
]


@dataclass
class InteractionTable:
    """Deduplicated (user, item[, rating[, timestamp]]) records with dense ids."""

    u: np.ndarray
    i: np.ndarray
    rating: np.ndarray | None
    timestamp: np.ndarray | None
    user_labels: list
    item_labels: list

    @property
    def n_records(self) -> int:
        return int(self.u.size)

    @property
    def n_users(self) -> int:
        return len(self.user_labels)

    @property
    def n_items(self) -> int:
        return len(self.item_labels)

    @property
    def has_ratings(self) -> bool:
        return self.rating is not None

    @classmethod
    def from_records(
        cls,
        records: Sequence[tuple],
        user_labels: Sequence[str] | None = None,
        item_labels: Sequence[str] | None = None,
    ) -> "InteractionTable":
        """Build a table from (user, item[, rating[, timestamp]]) tuples.

        Duplicate (user, item) pairs are collapsed keeping the last
        occurrence. Dense ids follow first appearance unless explicit
        label universes are given.
        """
        if not records:
            raise ValueError("no interaction records")
        width = len(records[0])
        if width not in (2, 3, 4) or any(len(r) != width for r in records):
            raise ValueError("records must uniformly have 2, 3 or 4 fields")

        last: dict = {}
        order: list = []
        for rec in records:
            key = (rec[0], rec[1])
            if key not in last:
                order.append(key)
            last[key] = rec
        deduped = [last[k] for k in order]

        users = list(user_labels) if user_labels is not None else []
        items = list(item_labels) if item_labels is not None else []
        uidx = {u: k for k, u in enumerate(users)}
        iidx = {i: k for k, i in enumerate(items)}
        for rec in deduped:
            if rec[0] not in uidx:
                uidx[rec[0]] = len(users)
                users.append(rec[0])
            if rec[1] not in iidx:
                iidx[rec[1]] = len(items)
                items.append(rec[1])

        u = np.asarray([uidx[r[0]] for r in deduped], dtype=np.int64)
        i = np.asarray([iidx[r[1]] for r in deduped], dtype=np.int64)
        rating = np.asarray([float(r[2]) for r in deduped]) if width >= 3 else None
        timestamp = np.asarray([int(r[3]) for r in deduped], dtype=np.int64) if width == 4 else None
        return cls(u=u, i=i, rating=rating, timestamp=timestamp, user_labels=users, item_labels=items)

    def take(self, indices: Sequence[int]) -> "InteractionTable":
        """Row subset sharing this table's id maps."""
        idx = np.asarray(indices, dtype=np.intp)
        return InteractionTable(
            u=self.u[idx],
            i=self.i[idx],
            rating=None if self.rating is None else self.rating[idx],
            timestamp=None if self.timestamp is None else self.timestamp[idx],
            user_labels=self.user_labels,
            item_labels=self.item_labels,
        )

    def records(self) -> list:
        """Back-conversion to labeled record tuples, in row order."""
        out = []
        for k in range(self.n_records):
            rec = [self.user_labels[self.u[k]], self.item_labels[self.i[k]]]
            if self.rating is not None:
                rec.append(float(self.rating[k]))
            if self.timestamp is not None:
                rec.append(int(self.timestamp[k]))
            out.append(tuple(rec))
        return out

    def positives_by_user(self) -> list:
        """Per-dense-user-id list of item-id arrays (row order preserved)."""
        buckets: list = [[] for _ in range(self.n_users)]
        for uu, ii in zip(self.u, self.i):
            buckets[uu].append(int(ii))
        return [np.asarray(b, dtype=np.int64) for b in buckets]


_DELIMS = {"tsv": "\t", "csv": ","}
_HEADERS = (["user", "item"], ["user", "item", "rating"], ["user", "item", "rating", "timestamp"])


def load_interactions(path: str, fmt: str = "tsv") -> InteractionTable:
    """Parse a delimited interaction file with a header row.

    Accepted headers: user,item / user,item,rating /
    user,item,rating,timestamp. Malformed lines raise with their line
    number; a file without data rows is rejected.
    """
    if fmt not in _DELIMS:
        raise ValueError(f"format must be one of {sorted(_DELIMS)}, got {fmt!r}")
    delim = _DELIMS[fmt]
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delim)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header not in _HEADERS:
            raise ValueError(f"{path}: unrecognized header {header}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                rec: tuple = (row[0], row[1])
                if width >= 3:
                    rec = rec + (float(row[2]),)
                if width == 4:
                    rec = rec + (int(row[3]),)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            records.append(rec)
    if not records:
        raise ValueError(f"{path}: no interaction records")
    return InteractionTable.from_records(records)


def write_interactions(table: InteractionTable, path: str, fmt: str = "tsv") -> None:
    delim = _DELIMS[fmt]
    header = ["user", "item"]
    if table.rating is not None:
        header.append("rating")
    if table.timestamp is not None:
        header.append("timestamp")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delim)
        writer.writerow(header)
        for rec in table.records():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in rec])


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    min_user_interactions: int = 3
    seed: int = 0
    noise_mode: str = "clean"
    noise_rating_threshold: float = 3.0
    # optional cap on noisy records added, as a fraction of the clean
    # train+val record count; None adds everything
    noise_cap: float | None = None

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0.0 for f in fracs):
            raise ValueError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")
        if self.noise_mode not in ("clean", "noise"):
            raise ValueError(f"noise_mode must be 'clean' or 'noise', got {self.noise_mode!r}")
        if self.min_user_interactions < 1:
            raise ValueError("min_user_interactions must be >= 1")


@dataclass
class SplitResult:
    train: InteractionTable
    val: InteractionTable
    test: InteractionTable
    manifest: dict = field(default_factory=dict)


def _user_rng(seed: int, user_id: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, user_id, stream]))


def make_split(table: InteractionTable, spec: SplitSpec) -> SplitResult:
    """Per-user random split with the clean/noise protocol.

    Clean mode drops records rated below the threshold, then splits each
    retained user's records by the spec fractions with a per-user seeded
    shuffle. Noise mode performs the identical clean split (so the test
    set matches the clean run of the same seed exactly) and then routes
    the below-threshold records of retained users into train or val only.
    Users with fewer clean records than ``min_user_interactions`` are
    dropped entirely and reported in the manifest.
    """
    if spec.noise_mode == "noise" and table.rating is None:
        raise ValueError("noise_mode='noise' requires a rating column")

    if table.rating is not None:
        clean_mask = table.rating >= spec.noise_rating_threshold
    else:
        clean_mask = np.ones(table.n_records, dtype=bool)
    clean_idx = np.flatnonzero(clean_mask)

    by_user: dict = {}
    for row in clean_idx:
        by_user.setdefault(int(table.u[row]), []).append(int(row))

    retained = sorted(uid for uid, rows in by_user.items() if len(rows) >= spec.min_user_interactions)
    retained_set = set(retained)
    dropped = sorted(set(by_user) - retained_set)

    train_rows: list = []
    val_rows: list = []
    test_rows: list = []
    for uid in retained:
        rows = np.asarray(by_user[uid], dtype=np.int64)
        perm = _user_rng(spec.seed, uid).permutation(rows.size)
        n = rows.size
        n_train = int(math.floor(spec.train_frac * n + 0.5))
        n_trval = int(math.floor((spec.train_frac + spec.val_frac) * n + 0.5))
        n_train = min(max(n_train, 0), n)
        n_trval = min(max(n_trval, n_train), n)
        shuffled = rows[perm]
        train_rows.extend(shuffled[:n_train].tolist())
        val_rows.extend(shuffled[n_train:n_trval].tolist())
        test_rows.extend(shuffled[n_trval:].tolist())

    noisy_train = 0
    noisy_val = 0
    if spec.noise_mode == "noise":
        noisy_rows = [int(r) for r in np.flatnonzero(~clean_mask) if int(table.u[r]) in retained_set]
        if spec.noise_cap is not None:
            limit = int(math.floor(spec.noise_cap * (len(train_rows) + len(val_rows))))
            if len(noisy_rows) > limit:
                pick = _user_rng(spec.seed, -1, stream=2).choice(len(noisy_rows), size=limit, replace=False)
                noisy_rows = [noisy_rows[j] for j in np.sort(pick)]
        p_train = spec.train_frac / (spec.train_frac + spec.val_frac)
        for row in noisy_rows:
            # one draw per record, keyed by row so routing is stable under caps
            if _user_rng(spec.seed, row, stream=1).uniform() < p_train:
                train_rows.append(row)
                noisy_train += 1
            else:
                val_rows.append(row)
                noisy_val += 1

    result = SplitResult(
        train=table.take(sorted(train_rows)),
        val=table.take(sorted(val_rows)),
        test=table.take(sorted(test_rows)),
    )
    result.manifest = {
        "spec": asdict(spec),
        "n_users_total": table.n_users,
        "n_users_retained": len(retained),
        "dropped_users": [table.user_labels[uid] for uid in dropped],
        "counts": {
            "train": result.train.n_records,
            "val": result.val.n_records,
            "test": result.test.n_records,
            "noisy_added_train": noisy_train,
            "noisy_added_val": noisy_val,
        },
    }
    return result


def write_split(result: SplitResult, outdir: str, fmt: str = "tsv") -> None:
    os.makedirs(outdir, exist_ok=True)
    for name, part in (("train", result.train), ("val", result.val), ("test", result.test)):
        write_interactions(part, os.path.join(outdir, f"{name}.{fmt}"), fmt=fmt)
    with open(os.path.join(outdir, "split_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(result.manifest, fh, indent=2)


@dataclass
class SyntheticData:
    """Generated interactions plus the latent factors that produced them."""

    table: InteractionTable
    user_factors: np.ndarray
    item_factors: np.ndarray
    n_true_positives: int
    n_noisy_positives: int


def synth_generate(
    n_users: int,
    n_items: int,
    d_true: int = 8,
    density: float = 0.05,
    noise_flip_rate: float = 0.0,
    seed: int = 0,
) -> SyntheticData:
    """Latent-factor interaction table with controllable label noise.

    Positives are the top ``density`` quantile of logistic(user . item)
    over all pairs (rating 5); a ``noise_flip_rate`` fraction of the
    final positives are flipped former negatives (rating 1), so the
    clean/noise split protocol applies directly. Deterministic per seed.
    """
    if n_users < 2 or n_items < 2 or d_true < 1:
        raise ValueError("need n_users >= 2, n_items >= 2, d_true >= 1")
    if not (0.0 < density < 1.0):
        raise ValueError(f"density must lie in (0, 1), got {density}")
    if not (0.0 <= noise_flip_rate < 1.0):
        raise ValueError(f"noise_flip_rate must lie in [0, 1), got {noise_flip_rate}")

    rng = np.random.default_rng(seed)
    uf = rng.normal(0.0, 1.0, size=(n_users, d_true))
    vf = rng.normal(0.0, 1.0, size=(n_items, d_true))
    flat = (uf @ vf.T).ravel()

    n_cells = n_users * n_items
    n_pos = max(1, int(round(density * n_cells)))
    order = np.argsort(-flat, kind="stable")
    pos_cells = order[:n_pos]
    neg_cells = order[n_pos:]

    n_flip = int(round(noise_flip_rate * n_pos / (1.0 - noise_flip_rate)))
    if n_flip > neg_cells.size:
        raise ValueError("not enough negatives to flip at the requested rate")
    flipped = rng.choice(neg_cells, size=n_flip, replace=False) if n_flip else np.empty(0, dtype=np.int64)

    user_labels = [f"u{k}" for k in range(n_users)]
    item_labels = [f"i{k}" for k in range(n_items)]
    records = []
    for cell in np.sort(pos_cells):
        records.append((user_labels[cell // n_items], item_labels[cell % n_items], 5.0))
    for cell in np.sort(flipped):
        records.append((user_labels[cell // n_items], item_labels[cell % n_items], 1.0))
    table = InteractionTable.from_records(records, user_labels=user_labels, item_labels=item_labels)
    return SyntheticData(
        table=table,
        user_factors=uf,
        item_factors=vf,
        n_true_positives=n_pos,
        n_noisy_positives=int(n_flip),
    )
