"""Rating ingestion, normalization, train/test splitting and dataset statistics."""

from __future__ import annotations

import io
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed input line."""


class ScoreRangeError(ValueError):
    """Raw score outside the rating scale."""


class RatingRecord(NamedTuple):
    user_id: int
    item_id: int
    raw_score: int
    score: float


@dataclass(frozen=True)
class RatingScale:
    min_raw: int = 1
    max_raw: int = 5

    def __post_init__(self):
        if self.max_raw <= self.min_raw:
            raise ValueError(f"max_raw ({self.max_raw}) must exceed min_raw ({self.min_raw})")

    @property
    def values(self):
        return range(self.min_raw, self.max_raw + 1)


def normalize_score(raw, scale=RatingScale()):
    """Map a raw rating onto [0, 1] with ``(raw - min) / (max - min)``.

    Works on scalars and integer arrays. Raises :class:`ScoreRangeError` for
    values outside the scale.
    """
    arr = np.asarray(raw)
    if np.any(arr < scale.min_raw) or np.any(arr > scale.max_raw):
        raise ScoreRangeError(f"raw score {raw} outside scale {scale.min_raw}..{scale.max_raw}")
    out = (arr - scale.min_raw) / (scale.max_raw - scale.min_raw)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ColumnSpec:
    """Which columns of a delimited line hold user, item and rating."""

    delimiter: str = ","
    user_col: int = 0
    item_col: int = 1
    rating_col: int = 2
    skip_header: bool = False

    @classmethod
    def movielens(cls):
        return cls(delimiter="::")

    @classmethod
    def ml100k(cls):
        return cls(delimiter="\t")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rating tuples over dense user/item ids.

    ``users``, ``items`` and ``raw`` are parallel int64 arrays; ``score`` holds
    the normalized ratings. ``user_ids``/``item_ids`` map dense id to the
    external id. Train and test splits of one dataset share the id space.
    """

    users: np.ndarray
    items: np.ndarray
    raw: np.ndarray
    n_users: int
    n_items: int
    scale: RatingScale = RatingScale()
    user_ids: tuple = ()
    item_ids: tuple = ()
    score: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("users", "items", "raw"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.users) == len(self.items) == len(self.raw)):
            raise ValueError("users, items and raw must have equal length")
        if len(self.users):
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValueError("user id out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise ValueError("item id out of range")
        if not self.user_ids:
            object.__setattr__(self, "user_ids", tuple(str(u) for u in range(self.n_users)))
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(i) for i in range(self.n_items)))
        score = normalize_score(self.raw, self.scale) if len(self.raw) else np.zeros(0)
        score = np.asarray(score, dtype=np.float64)
        score.setflags(write=False)
        object.__setattr__(self, "score", score)

    def __len__(self):
        return len(self.users)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and self.scale == other.scale
            and self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.raw, other.raw)
        )

    @property
    def records(self):
        return [
            RatingRecord(int(u), int(i), int(r), float(s))
            for u, i, r, s in zip(self.users, self.items, self.raw, self.score)
        ]

    def subset(self, index):
        """Records at ``index`` (array of positions or bool mask), same id space."""
        return Dataset(
            self.users[index],
            self.items[index],
            self.raw[index],
            self.n_users,
            self.n_items,
            self.scale,
            self.user_ids,
            self.item_ids,
        )


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train: Dataset
    test: Dataset
    requested_fraction: float
    achieved_fraction: float


def _open_lines(source):
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return fh.read().splitlines()
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return source.read().splitlines()
    return list(source)


def parse_ratings(source, fmt=ColumnSpec(), scale=RatingScale()):
    """Read delimited rating lines into a :class:`Dataset`.

    ``source`` is a path, an open text stream or an iterable of lines. Dense
    ids follow first appearance; a repeated (user, item) pair keeps the last
    rating seen.
    """
    lines = _open_lines(source)
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    ratings: dict[tuple[int, int], int] = {}
    width = max(fmt.user_col, fmt.item_col, fmt.rating_col) + 1
    for lineno, line in enumerate(lines, start=1):
        if fmt.skip_header and lineno == 1:
            continue
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(fmt.delimiter)
        if len(parts) < width:
            raise ParseError(f"line {lineno}: expected at least {width} fields, got {len(parts)}")
        user, item = parts[fmt.user_col].strip(), parts[fmt.item_col].strip()
        try:
            value = float(parts[fmt.rating_col])
        except ValueError:
            raise ParseError(f"line {lineno}: rating {parts[fmt.rating_col]!r} is not a number") from None
        if not value.is_integer():
            raise ParseError(f"line {lineno}: rating {value} is not an integer")
        raw = int(value)
        if not scale.min_raw <= raw <= scale.max_raw:
            raise ScoreRangeError(
                f"line {lineno}: rating {raw} outside scale {scale.min_raw}..{scale.max_raw}"
            )
        u = user_map.setdefault(user, len(user_map))
        i = item_map.setdefault(item, len(item_map))
        ratings[(u, i)] = raw
    if not ratings:
        raise ParseError("no records")
    keys = np.array(list(ratings.keys()), dtype=np.int64)
    return Dataset(
        keys[:, 0],
        keys[:, 1],
        np.fromiter(ratings.values(), dtype=np.int64, count=len(ratings)),
        len(user_map),
        len(item_map),
        scale,
        tuple(user_map),
        tuple(item_map),
    )


def serialize_ratings(ds, delimiter=","):
    """Lines ``user,item,raw`` with external ids, readable by :func:`parse_ratings`."""
    return [
        f"{ds.user_ids[u]}{delimiter}{ds.item_ids[i]}{delimiter}{r}"
        for u, i, r in zip(ds.users, ds.items, ds.raw)
    ]


def split_train_test(ds, train_fraction=0.8, seed=0):
    """Random train/test split in which every test user and item also occurs in train.

    After the random cut, test records whose user or item is missing from train
    are promoted to train. Train records whose user and item both keep another
    train record are then demoted, in shuffled order, to restore the requested
    ratio. If the ratio cannot be restored a warning reports the achieved one.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(ds)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    target = int(round(train_fraction * n))
    in_train = np.zeros(n, dtype=bool)
    in_train[order[:target]] = True

    user_cnt = np.bincount(ds.users[in_train], minlength=ds.n_users)
    item_cnt = np.bincount(ds.items[in_train], minlength=ds.n_items)
    promoted = 0
    for r in order[target:]:
        u, i = ds.users[r], ds.items[r]
        if user_cnt[u] == 0 or item_cnt[i] == 0:
            in_train[r] = True
            user_cnt[u] += 1
            item_cnt[i] += 1
            promoted += 1

    excess = promoted
    if excess:
        for r in order[:target][::-1]:
            if excess == 0:
                break
            u, i = ds.users[r], ds.items[r]
            if in_train[r] and user_cnt[u] > 1 and item_cnt[i] > 1:
                in_train[r] = False
                user_cnt[u] -= 1
                item_cnt[i] -= 1
                excess -= 1

    achieved = in_train.sum() / n
    if abs(achieved - train_fraction) > 0.01:
        warnings.warn(
            f"coverage guarantee forces train fraction {achieved:.4f} "
            f"(requested {train_fraction:.4f})",
            stacklevel=2,
        )
    logger.info("split: %d train / %d test, %d promoted", in_train.sum(), n - in_train.sum(), promoted)
    # keep records in original order on both sides so snapshots are stable
    return SplitDataset(
        ds.subset(np.flatnonzero(in_train)),
        ds.subset(np.flatnonzero(~in_train)),
        train_fraction,
        float(achieved),
    )


def entity_degrees(ds, side="user"):
    if side == "user":
        return np.bincount(ds.users, minlength=ds.n_users)
    if side == "item":
        return np.bincount(ds.items, minlength=ds.n_items)
    raise ValueError(f"side must be 'user' or 'item', got {side!r}")


def feedback_histogram(ds, side="user"):
    """Number of entities per feedback count, e.g. ``{3: 2}`` for two users with 3 ratings each."""
    counts = Counter(entity_degrees(ds, side).tolist())
    return dict(sorted(counts.items()))


def write_histogram_csv(hist, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("count,frequency\n")
        for c, f in sorted(hist.items()):
            fh.write(f"{c},{f}\n")


def save_dataset(ds, path):
    """Write ``path`` (dense ``user,item,raw`` rows) and the ``<path>.ids`` id-map sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"# n_users={ds.n_users} n_items={ds.n_items} "
            f"scale={ds.scale.min_raw},{ds.scale.max_raw}\n"
        )
        for u, i, r in zip(ds.users.tolist(), ds.items.tolist(), ds.raw.tolist()):
            fh.write(f"{u},{i},{r}\n")
    with open(_idmap_path(path), "w", encoding="utf-8", newline="\n") as fh:
        for side, ids in (("user", ds.user_ids), ("item", ds.item_ids)):
            for dense, ext in enumerate(ids):
                fh.write(f"{side}\t{dense}\t{ext}\n")


def _idmap_path(path):
    return path.with_name(path.name + ".ids")


def load_dataset(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset snapshot not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ParseError(f"{path}: missing snapshot header")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        body = fh.read()
    lo, hi = (int(v) for v in meta["scale"].split(","))
    arr = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2)
    if arr.size == 0:
        arr = np.zeros((0, 3), dtype=np.int64)
    ids = {"user": [], "item": []}
    with open(_idmap_path(path), encoding="utf-8") as fh:
        for line in fh:
            side, _, ext = line.rstrip("\n").split("\t", 2)
            ids[side].append(ext)
    return Dataset(
        arr[:, 0],
        arr[:, 1],
        arr[:, 2],
        int(meta["n_users"]),
        int(meta["n_items"]),
        RatingScale(lo, hi),
        tuple(ids["user"]),
        tuple(ids["item"]),
    )


def synthetic_ratings(
    n_users=943,
    n_items=1682,
    n_records=100_000,
    rank=8,
    noise=0.6,
    selection=1.5,
    popularity_exponent=0.9,
    min_user_ratings=3,
    seed=0,
    scale=RatingScale(),
):
    """Low-rank ratings with long-tail activity and taste-driven item choice.

    Each user rates items drawn without replacement with probability
    proportional to ``popularity * exp(selection * affinity)``, so which items a
    user rated carries information about the user's taste, as in real
    explicit-feedback data. Raw ratings are the rounded, clipped sum of biases,
    the affinity and Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    theta = rng.normal(0.0, 1.0 / np.sqrt(rank), size=(n_users, rank))
    phi = rng.normal(0.0, 1.0 / np.sqrt(rank), size=(n_items, rank))
    affinity = theta @ phi.T
    affinity /= affinity.std()

    popularity = 1.0 / np.arange(1, n_items + 1) ** popularity_exponent
    popularity = popularity[rng.permutation(n_items)]
    activity = rng.lognormal(0.0, 1.0, size=n_users)
    cap = max(min_user_ratings, n_items // 2)

    def counts(c):
        return np.clip(np.round(activity * c), min_user_ratings, cap).astype(int)

    # heavy users are capped; raise the multiplier until the total is met
    lo, hi = 0.0, n_records / activity.min()
    for _ in range(60):
        mid_c = (lo + hi) / 2
        lo, hi = (mid_c, hi) if counts(mid_c).sum() < n_records else (lo, mid_c)
    per_user = counts(hi)

    logits = np.log(popularity)[None, :] + selection * affinity
    gumbel = -np.log(-np.log(rng.uniform(size=logits.shape)))
    keys = logits + gumbel
    users, items = [], []
    for u in range(n_users):
        chosen = np.argpartition(-keys[u], per_user[u])[: per_user[u]]
        users.append(np.full(len(chosen), u))
        items.append(np.sort(chosen))
    users = np.concatenate(users)
    items = np.concatenate(items)

    user_bias = rng.normal(0.0, 0.35, size=n_users)
    item_bias = rng.normal(0.0, 0.45, size=n_items)
    mid = (scale.min_raw + scale.max_raw) / 2 + 0.5
    value = mid + user_bias[users] + item_bias[items] + affinity[users, items] + rng.normal(0.0, noise, size=len(users))
    raw = np.clip(np.rint(value), scale.min_raw, scale.max_raw).astype(np.int64)

    perm = rng.permutation(len(users))
    return Dataset(
        users[perm],
        items[perm],
        raw[perm],
        n_users,
        n_items,
        scale,
        tuple(f"u{u}" for u in range(n_users)),
        tuple(f"i{i}" for i in range(n_items)),
    )


def dataset_from_records(records: Iterable[tuple[int, int, int]], n_users=None, n_items=None, scale=RatingScale()):
    """Build a dataset directly from dense ``(user, item, raw)`` triples."""
    arr = np.array(list(records), dtype=np.int64).reshape(-1, 3)
    if n_users is None:
        n_users = int(arr[:, 0].max()) + 1 if len(arr) else 0
    if n_items is None:
        n_items = int(arr[:, 1].max()) + 1 if len(arr) else 0
    return Dataset(arr[:, 0], arr[:, 1], arr[:, 2], n_users, n_items, scale)
