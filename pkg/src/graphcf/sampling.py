"""Fixed-width implicit-feedback lists per user and item.

Rows hold entity ids with ``PAD`` (-1) filling short lists. Step-one rows of a
user list items and rows of an item list users; step-two rows list entities of
the same side.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .graph import step_two_item_candidates, step_two_user_candidates

PAD = -1
DEFAULT_K = 20

_SIDE_CODE = {"user": 0, "item": 1}


@dataclass(frozen=True)
class SamplePolicy:
    kind: str = "random"
    seed: int = 0
    k: int = DEFAULT_K

    def __post_init__(self):
        if self.kind not in ("random", "relevance"):
            raise ValueError(f"unknown sampling policy {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True, eq=False)
class FeedbackTable:
    side: str
    step: int
    rows: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D array")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def k(self):
        return self.rows.shape[1]

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return (
            isinstance(other, FeedbackTable)
            and (self.side, self.step) == (other.side, other.step)
            and np.array_equal(self.rows, other.rows)
        )

    def resolved(self, pad_index):
        """Rows with PAD replaced by ``pad_index`` (the PAD embedding row)."""
        return np.where(self.rows < 0, pad_index, self.rows)


@dataclass(frozen=True, eq=False)
class FeedbackTables:
    """Everything a model kind needs besides parameters: rows and true degrees."""

    user: FeedbackTable | None = None
    item: FeedbackTable | None = None
    user2: FeedbackTable | None = None
    item2: FeedbackTable | None = None
    user_degree: np.ndarray | None = None
    item_degree: np.ndarray | None = None


def _entity_rng(seed, side, step, entity):
    return np.random.default_rng([seed, _SIDE_CODE[side], step, entity])


def sample_random(g, side, policy):
    """Each row: ``k`` draws with replacement from the entity's neighbors."""
    indptr, ids, _ = g.side_csr(side)
    n = len(indptr) - 1
    rows = np.full((n, policy.k), PAD, dtype=np.int64)
    for e in range(n):
        nbrs = ids[indptr[e] : indptr[e + 1]]
        if len(nbrs):
            rows[e] = _entity_rng(policy.seed, side, 1, e).choice(nbrs, size=policy.k, replace=True)
    return FeedbackTable(side, 1, rows)


def pretrain_relevance_embeddings(train, cfg, test=None):
    """Fit plain MF whose embeddings score user-item relevance."""
    from .model import ModelKind
    from .trainer import train as fit

    if ModelKind.parse(cfg.model_kind) is not ModelKind.MF:
        raise ValueError("relevance pretraining needs an MF config")
    params, _ = fit(train, FeedbackTables(), cfg, test=test)
    return params


def edge_relevance(g, side, P, Q):
    """Inner product of MF embeddings for each edge, in ``side``'s CSR order."""
    indptr, ids, _ = g.side_csr(side)
    owners = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    if side == "user":
        return np.einsum("ij,ij->i", P[owners], Q[ids])
    return np.einsum("ij,ij->i", Q[owners], P[ids])


def sample_relevance(g, side, mf, k=DEFAULT_K):
    """Top-``k`` neighbors by ``<p_u, q_i>``, ties to the smaller id, PAD-filled."""
    if mf.P.shape[1] != mf.Q.shape[1]:
        raise ValueError(f"embedding widths differ: P {mf.P.shape[1]} vs Q {mf.Q.shape[1]}")
    indptr, ids, _ = g.side_csr(side)
    scores = edge_relevance(g, side, mf.P, mf.Q)
    return FeedbackTable(side, 1, kernels.topk_csr(indptr, ids, scores, k, PAD))


def sample_step_two(candidates, k=DEFAULT_K, seed=0, side="user"):
    """``k`` distinct draws per entity from its candidate set, PAD-filled when short."""
    rows = np.full((len(candidates), k), PAD, dtype=np.int64)
    for e, cand in enumerate(candidates):
        cand = np.array(sorted(cand), dtype=np.int64)
        if len(cand) >= k:
            rows[e] = _entity_rng(seed, side, 2, e).choice(cand, size=k, replace=False)
        else:
            rows[e, : len(cand)] = cand
    return FeedbackTable(side, 2, rows)


def step_two_tables(g, user_table, item_table, k=DEFAULT_K, seed=0, exclude_self=False):
    """Step-two user and item tables built from sampled step-one tables."""
    user_cand = [
        step_two_user_candidates(g, u, item_table, user_table, exclude_self) for u in range(g.n_users)
    ]
    item_cand = [
        step_two_item_candidates(g, i, user_table, item_table, exclude_self) for i in range(g.n_items)
    ]
    return (
        sample_step_two(user_cand, k, seed, "user"),
        sample_step_two(item_cand, k, seed, "item"),
    )


def save_table(table, path):
    """Write ``entity_id,e1,...,ek`` lines with PAD as -1."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# side={table.side} step={table.step} k={table.k}\n")
        for e, row in enumerate(table.rows.tolist()):
            fh.write(f"{e}," + ",".join(map(str, row)) + "\n")


def load_table(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feedback table not found: {path}")
    with open(path, encoding="utf-8") as fh:
        meta = dict(tok.split("=", 1) for tok in fh.readline()[1:].split())
        k = int(meta["k"])
        rows = []
        for n, line in enumerate(fh):
            vals = [int(v) for v in line.split(",")]
            if vals[0] != n or len(vals) != k + 1:
                raise ValueError(f"{path}: malformed row for entity {n}")
            rows.append(vals[1:])
    return FeedbackTable(meta["side"], int(meta["step"]), np.array(rows, dtype=np.int64).reshape(-1, k))
