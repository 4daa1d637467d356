"""Batched forward pass shared by every model kind, and per-pair predict functions.

A rating prediction is ``f(<p_u + A_u, q_i + A_i> + b_u + b_i + b)`` where
``A_u``/``A_i`` are the user/item feedback aggregates the kind uses (none for
MF). Every predict function routes through :func:`forward`, which keeps
reductions between kinds exact: zeroed blocks contribute exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MLP_OF_SLOT, SLOTS, ModelKind, apply_output, uniform_coef
from .sampling import PAD
from .weighting import ConfigError, mlp_hidden, softmax_temperature, weighted_sum


@dataclass
class SlotCache:
    slot: str
    rows: np.ndarray
    emb: np.ndarray
    coef: np.ndarray
    mlp_acts: list | None = None
    mask: np.ndarray | None = None


@dataclass
class ForwardCache:
    users: np.ndarray
    items: np.ndarray
    U: np.ndarray
    V: np.ndarray
    z: np.ndarray
    pred: np.ndarray
    dpred: np.ndarray
    slots: list


def resolve_rows(params, slot, rows):
    """Replace PAD (-1) in a row array by the PAD row index of the slot's table."""
    target = SLOTS[slot][2]
    rows = np.asarray(rows, dtype=np.int64)
    return np.where(rows == PAD, params.pad_index(target), rows)


def batch_rows(params, tables, users, items):
    """Resolved feedback rows for a batch, keyed by slot."""
    out = {}
    for slot in params.kind.feedback_slots:
        table = getattr(tables, slot)
        if table is None:
            raise ConfigError(f"model kind {params.kind.value} needs a '{slot}' feedback table")
        owners = users if SLOTS[slot][1] == "user" else items
        out[slot] = resolve_rows(params, slot, table.rows[owners])
    return out


def _slot_coef(params, slot, owners, rows, emb, cond, degrees):
    """Aggregation weights for one slot; returns ``(coef, mlp_acts, mask)``."""
    weighting = params.kind.weighting
    B, k = rows.shape
    if weighting == "uniform":
        deg = None
        if params.norm == "degree":
            if degrees is None:
                raise ConfigError("degree normalization needs true entity degrees")
            deg = degrees[owners]
            return uniform_coef(k, "degree", deg), None, None
        return np.broadcast_to(uniform_coef(k, params.norm), (B, k)), None, None
    if weighting == "weighted":
        alpha, beta = params.blocks["alpha"], params.blocks["beta"]
        if slot == "user":
            return np.einsum("bd,bkd->bk", alpha[owners], beta[rows]), None, None
        return np.einsum("bkd,bd->bk", alpha[rows], beta[owners]), None, None
    # attentive
    s, acts = mlp_hidden(params.mlp(MLP_OF_SLOT[slot]), emb, cond)
    mask = None
    if params.mask_pad:
        mask = rows != params.pad_index(SLOTS[slot][2])
    return softmax_temperature(s, params.temperature, mask), acts, mask


def forward(params, users, items, rows, degrees=None):
    """Predictions for the pairs ``(users[b], items[b])``.

    ``rows`` maps each slot the kind uses to a ``(B, k)`` array of resolved
    row indices (see :func:`batch_rows`). ``degrees`` maps ``"user"``/``"item"``
    to true degrees and is only read under degree normalization.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    blocks = params.blocks
    pu = blocks["P"][users]
    qi = blocks["Q"][items]
    U = pu.copy()
    V = qi.copy()
    slots = []
    for slot in params.kind.feedback_slots:
        table_name, owner, _ = SLOTS[slot]
        r = rows[slot]
        emb = blocks[table_name][r]
        owners = users if owner == "user" else items
        cond = pu if owner == "user" else qi
        deg = None if degrees is None else degrees.get(owner)
        coef, acts, mask = _slot_coef(params, slot, owners, r, emb, cond, deg)
        agg = weighted_sum(coef, emb)
        if owner == "user":
            U += agg
        else:
            V += agg
        slots.append(SlotCache(slot, r, emb, coef, acts, mask))
    z = np.einsum("bd,bd->b", U, V) + blocks["bu"][users] + blocks["bi"][items] + blocks["b"][0]
    pred, dpred = apply_output(z, params.output)
    return ForwardCache(users, items, U, V, z, np.asarray(pred), np.asarray(dpred), slots)


def predict_batch(params, tables, users, items, batch_size=4096):
    """Predictions for many pairs using the persisted feedback tables."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    degrees = _degrees(tables)
    out = np.empty(len(users))
    for lo in range(0, len(users), batch_size):
        u, i = users[lo : lo + batch_size], items[lo : lo + batch_size]
        out[lo : lo + batch_size] = forward(params, u, i, batch_rows(params, tables, u, i), degrees).pred
    return out


def _degrees(tables):
    if tables is None or tables.user_degree is None:
        return None
    return {"user": tables.user_degree, "item": tables.item_degree}


def _check_kind(params, *kinds):
    if params.kind not in kinds:
        names = "/".join(k.value for k in kinds)
        raise ConfigError(f"parameters are for {params.kind.value}, expected {names}")


def _check_ids(params, u, i):
    if not 0 <= u < params.n_users:
        raise IndexError(f"user id {u} out of range [0, {params.n_users})")
    if not 0 <= i < params.n_items:
        raise IndexError(f"item id {i} out of range [0, {params.n_items})")


def _predict_one(params, u, i, row_by_slot, degrees=None):
    _check_ids(params, u, i)
    rows = {}
    for slot in params.kind.feedback_slots:
        if row_by_slot.get(slot) is None:
            raise ConfigError(f"{params.kind.value} prediction needs the '{slot}' feedback row")
        rows[slot] = resolve_rows(params, slot, np.asarray(row_by_slot[slot])[None, :])
    deg = None
    if degrees is not None:
        deg = {k: np.asarray(v) for k, v in degrees.items()}
    return float(forward(params, [u], [i], rows, deg).pred[0])


def predict_mf(params, u, i):
    _check_kind(params, ModelKind.MF)
    return _predict_one(params, u, i, {})


def predict_svdpp(params, u, i, user_row):
    """SVD++ family prediction (plain, weighted or attentive user-side feedback)."""
    _check_kind(params, ModelKind.SVDPP, ModelKind.W_SVDPP, ModelKind.A_SVDPP)
    return _predict_one(params, u, i, {"user": user_row})


def predict_gcf(params, u, i, user_row, item_row):
    _check_kind(params, ModelKind.GCF)
    return _predict_one(params, u, i, {"user": user_row, "item": item_row})


def predict_wgcf(params, u, i, user_row, item_row):
    _check_kind(params, ModelKind.W_GCF)
    return _predict_one(params, u, i, {"user": user_row, "item": item_row})


def predict_agcf(params, u, i, user_row, item_row):
    _check_kind(params, ModelKind.A_GCF)
    return _predict_one(params, u, i, {"user": user_row, "item": item_row})


def predict_agcf2(params, u, i, user_row, item_row, user_row2, item_row2):
    _check_kind(params, ModelKind.A_GCF2)
    if "Y2" not in params.blocks or "X2" not in params.blocks:
        raise ConfigError("step-two embedding tables missing")
    return _predict_one(
        params, u, i, {"user": user_row, "item": item_row, "user2": user_row2, "item2": item_row2}
    )


def predict(params, u, i, rows=None, degrees=None):
    """Prediction for any kind; ``rows`` maps slot name to a feedback row."""
    return _predict_one(params, u, i, rows or {}, degrees)


def attention_rows(params, tables, slot, entities=None, batch_size=2048, with_scores=False):
    """Attention weights of every entity's row in ``slot`` (entities, k).

    With ``with_scores`` the raw network scores are returned first.
    """
    if params.kind.weighting != "attentive":
        raise ConfigError(f"{params.kind.value} has no attention network")
    table = getattr(tables, slot)
    owner = SLOTS[slot][1]
    n = params.n_users if owner == "user" else params.n_items
    entities = np.arange(n) if entities is None else np.asarray(entities)
    cond_block = params.blocks["P" if owner == "user" else "Q"]
    emb_block = params.blocks[SLOTS[slot][0]]
    out = np.empty((len(entities), table.k))
    raw = np.empty_like(out) if with_scores else None
    for lo in range(0, len(entities), batch_size):
        e = entities[lo : lo + batch_size]
        r = resolve_rows(params, slot, table.rows[e])
        scores, _ = mlp_hidden(params.mlp(MLP_OF_SLOT[slot]), emb_block[r], cond_block[e])
        mask = r != params.pad_index(SLOTS[slot][2]) if params.mask_pad else None
        out[lo : lo + batch_size] = softmax_temperature(scores, params.temperature, mask)
        if with_scores:
            raw[lo : lo + batch_size] = scores
    return (raw, out) if with_scores else out
