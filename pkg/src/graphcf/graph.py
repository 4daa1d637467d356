"""User-item bipartite graph over the training split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """Both adjacency directions in CSR form, neighbors sorted by id.

    ``user_indptr[u]:user_indptr[u+1]`` slices ``user_items``/``user_raw``
    to give R(u); the item side is symmetric.
    """

    n_users: int
    n_items: int
    user_indptr: np.ndarray
    user_items: np.ndarray
    user_raw: np.ndarray
    item_indptr: np.ndarray
    item_users: np.ndarray
    item_raw: np.ndarray

    @property
    def user_degree(self):
        return np.diff(self.user_indptr)

    @property
    def item_degree(self):
        return np.diff(self.item_indptr)

    @property
    def n_edges(self):
        return len(self.user_items)

    def rating(self, u, i):
        """Raw rating of edge (u, i), or None if the pair is not an edge."""
        lo, hi = self.user_indptr[u], self.user_indptr[u + 1]
        pos = lo + np.searchsorted(self.user_items[lo:hi], i)
        if pos < hi and self.user_items[pos] == i:
            return int(self.user_raw[pos])
        return None

    def side_csr(self, side):
        """``(indptr, neighbor ids, raw)`` for ``side`` in {"user", "item"}."""
        if side == "user":
            return self.user_indptr, self.user_items, self.user_raw
        if side == "item":
            return self.item_indptr, self.item_users, self.item_raw
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")

    def n_entities(self, side):
        return self.n_users if side == "user" else self.n_items


def _csr(rows, cols, vals, n_rows):
    order = np.lexsort((cols, rows))
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return indptr, cols[order].astype(np.int64), vals[order].astype(np.int64)


def build_graph(train):
    """Bipartite graph of the training records."""
    if len(train) == 0:
        raise ValueError("cannot build a graph from an empty dataset")
    u_ptr, u_items, u_raw = _csr(train.users, train.items, train.raw, train.n_users)
    i_ptr, i_users, i_raw = _csr(train.items, train.users, train.raw, train.n_items)
    for arr in (u_ptr, u_items, u_raw, i_ptr, i_users, i_raw):
        arr.setflags(write=False)
    return InteractionGraph(train.n_users, train.n_items, u_ptr, u_items, u_raw, i_ptr, i_users, i_raw)


def _neighbors(indptr, ids, raw, n, e, what):
    if not 0 <= e < n:
        raise IndexError(f"{what} id {e} out of range [0, {n})")
    lo, hi = indptr[e], indptr[e + 1]
    return list(zip(ids[lo:hi].tolist(), raw[lo:hi].tolist()))


def user_neighbors(g, u):
    """R(u) as ``[(item, raw rating), ...]`` sorted by item id."""
    return _neighbors(g.user_indptr, g.user_items, g.user_raw, g.n_users, u, "user")


def item_neighbors(g, i):
    """R(i) as ``[(user, raw rating), ...]`` sorted by user id."""
    return _neighbors(g.item_indptr, g.item_users, g.item_raw, g.n_items, i, "item")


def _step_two(g, e, side, opposite_feedback, own_feedback, exclude_self):
    if own_feedback is not None:
        hop = own_feedback.rows[e]
        hop = hop[hop >= 0]
    else:
        indptr, ids, _ = g.side_csr(side)
        if not 0 <= e < g.n_entities(side):
            raise IndexError(f"{side} id {e} out of range")
        hop = ids[indptr[e] : indptr[e + 1]]
    n_rows = len(opposite_feedback.rows)
    out = set()
    for j in np.unique(hop).tolist():
        if j >= n_rows:
            raise KeyError(f"no feedback row for {'item' if side == 'user' else 'user'} {j}")
        row = opposite_feedback.rows[j]
        out.update(row[row >= 0].tolist())
    if exclude_self:
        out.discard(e)
    return out


def step_two_user_candidates(g, u, item_feedback, user_feedback=None, exclude_self=False):
    """Users reachable through the feedback lists of the items next to ``u``.

    The hop to items uses ``user_feedback[u]`` when given (the sampled list),
    else the full R(u). PAD entries never enter the result.
    """
    return _step_two(g, u, "user", item_feedback, user_feedback, exclude_self)


def step_two_item_candidates(g, i, user_feedback, item_feedback=None, exclude_self=False):
    """Item-side counterpart of :func:`step_two_user_candidates`."""
    return _step_two(g, i, "item", user_feedback, item_feedback, exclude_self)


def dump_adjacency(g, side, path):
    indptr, ids, _ = g.side_csr(side)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in range(len(indptr) - 1):
            nbrs = " ".join(map(str, ids[indptr[e] : indptr[e + 1]].tolist()))
            fh.write(f"{e},{nbrs}\n")
