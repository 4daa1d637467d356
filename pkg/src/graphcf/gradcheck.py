"""Random small instances for checking gradients of every model kind."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MLP_OF_SLOT, SLOTS, ModelKind, init_params
from .predict import batch_rows
from .sampling import FeedbackTable, FeedbackTables
from .trainer import Batch, TrainConfig, finite_diff_check


@dataclass
class Instance:
    params: object
    batch: Batch
    tables: FeedbackTables
    cfg: TrainConfig


def relu_margin(params, batch, tables):
    """Smallest |pre-activation| over every hidden unit the batch evaluates."""
    if params.kind.weighting != "attentive":
        return np.inf
    rows = batch_rows(params, tables, batch.users, batch.items)
    margin = np.inf
    for slot, r in rows.items():
        owner = SLOTS[slot][1]
        cond = params.blocks["P"][batch.users] if owner == "user" else params.blocks["Q"][batch.items]
        emb = params.blocks[SLOTS[slot][0]][r]
        h = np.concatenate([np.broadcast_to(cond[:, None, :], (*r.shape, cond.shape[1])), emb], axis=-1)
        mlp = params.mlp(MLP_OF_SLOT[slot])
        for W, c in zip(mlp.weights[:-1], mlp.biases[:-1]):
            pre = h @ W + c
            margin = min(margin, float(np.abs(pre).min()))
            h = np.maximum(pre, 0.0)
    return margin


def random_instance(kind, rng, n_users=12, n_items=12, K=4, k=5, n_records=8, hidden=(32,),
                    l2=0.05, l2_weight=0.05, temperature=0.1, param_scale=0.5, min_margin=1e-3):
    """Parameters, tables (with PAD entries) and a batch drawn at random.

    Draws are repeated until every ReLU pre-activation is at least
    ``min_margin`` away from its kink, so central differences with small
    steps never straddle one.
    """
    kind = ModelKind.parse(kind)
    cfg = TrainConfig(model_kind=kind.value, K=K, k=k, l2=l2, l2_weight=l2_weight,
                      temperature=temperature, hidden=hidden)
    while True:
        params = init_params(kind, n_users, n_items, K, K, k, hidden, temperature=temperature)
        for arr in params.blocks.values():
            arr[...] = rng.uniform(-param_scale, param_scale, size=arr.shape)

        def table(side, step, n_rows, n_ids):
            return FeedbackTable(side, step, rng.integers(-1, n_ids, size=(n_rows, k)))

        tables = FeedbackTables(
            table("user", 1, n_users, n_items),
            table("item", 1, n_items, n_users),
            table("user", 2, n_users, n_users),
            table("item", 2, n_items, n_items),
        )
        batch = Batch(
            rng.integers(0, n_users, n_records),
            rng.integers(0, n_items, n_records),
            rng.uniform(0.0, 1.0, n_records),
        )
        if relu_margin(params, batch, tables) >= min_margin:
            return Instance(params, batch, tables, cfg)


def check_all_kinds(n_instances=20, seed=0, eps=1e-5, **instance_args):
    """Worst finite-difference relative error per model kind."""
    rng = np.random.default_rng(seed)
    worst = {}
    for kind in ModelKind:
        errs = []
        for _ in range(n_instances):
            inst = random_instance(kind, rng, **instance_args)
            errs.append(finite_diff_check(inst.params, inst.batch, inst.cfg, inst.tables, eps=eps))
        worst[kind.value] = max(errs)
    return worst
