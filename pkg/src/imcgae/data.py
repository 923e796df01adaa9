"""Rating-log ingestion, id normalisation and splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    pass


class RawRating(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class RatingDataset:
    """Deduplicated (user, item, level) triples over dense internal ids.

    ``values`` keeps the true numeric rating of every triple. For training data
    it always equals ``levels[level_idx]``; for aligned test data it can differ
    when a test rating falls outside the training scale.
    """

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    level_idx: np.ndarray
    levels: np.ndarray
    values: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()
    _user_index: dict = field(default=None, repr=False, compare=False)
    _item_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._user_index is None:
            object.__setattr__(self, "_user_index", {t: k for k, t in enumerate(self.user_ids)})
        if self._item_index is None:
            object.__setattr__(self, "_item_index", {t: k for k, t in enumerate(self.item_ids)})

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def __len__(self) -> int:
        return len(self.users)

    def user_index(self, token: str) -> int | None:
        return self._user_index.get(token)

    def item_index(self, token: str) -> int | None:
        return self._item_index.get(token)

    def density(self) -> float:
        return len(self) / (self.n_users * self.n_items)

    def rating_values(self) -> np.ndarray:
        return self.levels[self.level_idx]

    def take(self, rows: np.ndarray) -> "RatingDataset":
        """Same id space and levels, subset of triples."""
        return RatingDataset(
            n_users=self.n_users,
            n_items=self.n_items,
            users=self.users[rows],
            items=self.items[rows],
            level_idx=self.level_idx[rows],
            levels=self.levels,
            values=self.values[rows],
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            _user_index=self._user_index,
            _item_index=self._item_index,
        )

    def to_raw(self) -> list[RawRating]:
        return [
            RawRating(self.user_ids[u], self.item_ids[i], float(v))
            for u, i, v in zip(self.users, self.items, self.values)
        ]


def parse_movielens(path, delimiter: str = "\t") -> list[RawRating]:
    """Read ``user<d>item<d>rating[<d>timestamp]`` lines; blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter) if delimiter != " " else line.split()
            if len(parts) < 3:
                raise DataError(f"{path}:{lineno}: expected at least 3 fields, got {len(parts)}")
            try:
                rating = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad rating {parts[2]!r}") from None
            if not math.isfinite(rating):
                raise DataError(f"{path}:{lineno}: non-finite rating")
            ts = None
            if len(parts) > 3 and parts[3].strip():
                try:
                    ts = int(float(parts[3]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad timestamp {parts[3]!r}") from None
            out.append(RawRating(parts[0].strip(), parts[1].strip(), rating, ts))
    return out


def build_dataset(ratings: Sequence[RawRating]) -> RatingDataset:
    if not ratings:
        raise DataError("cannot build a dataset from zero ratings")
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    last: dict[tuple[int, int], float] = {}
    for r in ratings:
        u = user_ids.setdefault(r.user, len(user_ids))
        i = item_ids.setdefault(r.item, len(item_ids))
        # re-insert so that iteration order follows the surviving (last) occurrence
        last.pop((u, i), None)
        last[(u, i)] = float(r.rating)
    pairs = np.array(list(last.keys()), dtype=np.int64).reshape(-1, 2)
    values = np.fromiter(last.values(), dtype=np.float64, count=len(last))
    levels = np.unique(values)
    return RatingDataset(
        n_users=len(user_ids),
        n_items=len(item_ids),
        users=pairs[:, 0].copy(),
        items=pairs[:, 1].copy(),
        level_idx=np.searchsorted(levels, values).astype(np.int64),
        levels=levels,
        values=values,
        user_ids=tuple(user_ids),
        item_ids=tuple(item_ids),
    )


def nearest_level(levels: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Index of the closest level; ties go to the lower level."""
    values = np.asarray(values, dtype=np.float64)
    pos = np.clip(np.searchsorted(levels, values), 1, max(len(levels) - 1, 1))
    if len(levels) == 1:
        return np.zeros(len(values), dtype=np.int64)
    lo, hi = levels[pos - 1], levels[pos]
    return np.where(values - lo <= hi - values, pos - 1, pos).astype(np.int64)


def align_test(test: Sequence[RawRating], train: RatingDataset) -> tuple[RatingDataset, np.ndarray]:
    """Map test ratings into the training id space.

    Unknown tokens get fresh ids after the training ones. Returns the aligned
    dataset and a boolean flag per unified node (users first, then items) that
    is True for nodes absent from ``train``.
    """
    user_ids = list(train.user_ids)
    item_ids = list(train.item_ids)
    u_index = dict(train._user_index)
    i_index = dict(train._item_index)
    last: dict[tuple[int, int], float] = {}
    for r in test:
        u = u_index.get(r.user)
        if u is None:
            u = u_index[r.user] = len(user_ids)
            user_ids.append(r.user)
        i = i_index.get(r.item)
        if i is None:
            i = i_index[r.item] = len(item_ids)
            item_ids.append(r.item)
        last.pop((u, i), None)
        last[(u, i)] = float(r.rating)
    pairs = np.array(list(last.keys()), dtype=np.int64).reshape(-1, 2)
    values = np.fromiter(last.values(), dtype=np.float64, count=len(last))
    n_users, n_items = len(user_ids), len(item_ids)
    ds = RatingDataset(
        n_users=n_users,
        n_items=n_items,
        users=pairs[:, 0].copy(),
        items=pairs[:, 1].copy(),
        level_idx=nearest_level(train.levels, values),
        levels=train.levels,
        values=values,
        user_ids=tuple(user_ids),
        item_ids=tuple(item_ids),
        _user_index=u_index,
        _item_index=i_index,
    )
    unseen = np.zeros(n_users + n_items, dtype=bool)
    unseen[train.n_users:n_users] = True
    unseen[n_users + train.n_items:] = True
    return ds, unseen


def _check_fraction(fraction: float) -> None:
    if not (0.0 < fraction <= 1.0):
        raise DataError(f"fraction must lie in (0, 1], got {fraction}")


def subsample(ds: RatingDataset, ratio: float, seed: int = 0) -> RatingDataset:
    """Keep ceil(ratio * |triples|) triples chosen uniformly without replacement."""
    _check_fraction(ratio)
    if ratio == 1.0:
        return ds
    k = math.ceil(ratio * len(ds))
    rows = np.sort(np.random.default_rng(seed).choice(len(ds), size=k, replace=False))
    return ds.take(rows)


def random_holdout(ds: RatingDataset, test_fraction: float, seed: int = 0) -> tuple[RatingDataset, RatingDataset]:
    """Uniform, non-stratified triple split (the ML-1M style 90/10 protocol)."""
    _check_fraction(test_fraction)
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.take(np.sort(perm[n_test:])), ds.take(np.sort(perm[:n_test]))


def node_holdout(ds: RatingDataset, user_fraction: float, seed: int = 0) -> tuple[RatingDataset, RatingDataset]:
    """Move every triple of floor(fraction * n_users) random users to the test side.

    Both halves keep the full id space, so held-out users simply have no
    training triples.
    """
    if not (0.0 < user_fraction < 1.0):
        raise DataError(f"user_fraction must lie in (0, 1), got {user_fraction}")
    n_pick = int(math.floor(user_fraction * ds.n_users))
    if n_pick == 0 or n_pick >= ds.n_users:
        raise DataError(f"user_fraction={user_fraction} selects {n_pick} of {ds.n_users} users")
    held = np.random.default_rng(seed).choice(ds.n_users, size=n_pick, replace=False)
    in_test = np.isin(ds.users, held)
    if in_test.all() or not in_test.any():
        raise DataError("node holdout produced an empty side")
    return ds.take(np.flatnonzero(~in_test)), ds.take(np.flatnonzero(in_test))


def load_dataset(path, delimiter: str = "\t") -> RatingDataset:
    return build_dataset(parse_movielens(path, delimiter))


def load_split(train_path, test_path, delimiter: str = "\t") -> tuple[RatingDataset, RatingDataset, np.ndarray]:
    train = load_dataset(train_path, delimiter)
    test, unseen = align_test(parse_movielens(test_path, delimiter), train)
    return train, test, unseen


def ratings_from_arrays(users: Iterable, items: Iterable, ratings: Iterable) -> list[RawRating]:
    """Convenience for tests and scripts."""
    return [RawRating(str(u), str(i), float(r)) for u, i, r in zip(users, items, ratings)]
