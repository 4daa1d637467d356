"""Squared-error objective, hand-derived gradients and the SGD loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .model import MLP_OF_SLOT, SLOTS, ModelKind, init_params, save_params
from .predict import batch_rows, forward, predict_batch
from .sampling import FeedbackTables
from .evaluation import rmse
from .optim import OPTIMIZERS, make_optimizer
from .weighting import ConfigError, mlp_backward, softmax_backward

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss or parameters became non-finite."""

    def __init__(self, epoch, block):
        self.epoch = epoch
        self.block = block
        where = block if block in ("objective", "predictions") else f"parameter block '{block}'"
        super().__init__(f"non-finite values at epoch {epoch} in {where}")


@dataclass
class TrainConfig:
    model_kind: str = "MF"
    K: int = 16
    Kp: int | None = None
    k: int = 20
    learning_rate: float = 0.05
    optimizer: str = "sgd"
    epochs: int = 20
    batch_size: int = 256
    l2: float = 1e-4
    l2_weight: float = 1e-4
    temperature: float = 0.1
    hidden: tuple = (32,)
    seed: int = 0
    sampling: str = "random"
    norm: str = "sqrt_k"
    output: str = "logistic"
    mask_pad: bool = False
    init_scale: float = 0.01
    mlp_init: str = "uniform"
    weight_init: str = "uniform"
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        self.kind = ModelKind.parse(self.model_kind)
        self.model_kind = self.kind.value
        if self.Kp is None:
            self.Kp = self.K
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("learning_rate", "l2", "l2_weight", "init_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; valid: {', '.join(OPTIMIZERS)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.k < 1 or self.K < 1:
            raise ConfigError("batch_size, k and K must be >= 1")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")

    def replace(self, **changes):
        data = {k: v for k, v in asdict(self).items() if k != "kind"}
        data.update(changes)
        return TrainConfig(**data)


@dataclass
class LossReport:
    train_rmse: list = field(default_factory=list)
    test_rmse: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_rmse)

    def to_csv(self, path, with_time=True):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,train_rmse,test_rmse,objective" + (",seconds" if with_time else "") + "\n")
            for e in range(len(self)):
                line = f"{e + 1},{self.train_rmse[e]!r},{self.test_rmse[e]!r},{self.objective[e]!r}"
                if with_time:
                    line += f",{self.seconds[e]:.3f}"
                fh.write(line + "\n")

    @classmethod
    def from_csv(cls, path):
        rep = cls()
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                row = dict(zip(header, line.strip().split(",")))
                rep.train_rmse.append(float(row["train_rmse"]))
                rep.test_rmse.append(float(row["test_rmse"]))
                rep.objective.append(float(row["objective"]))
                rep.seconds.append(float(row.get("seconds", "nan")))
        return rep


class Batch(NamedTuple):
    users: np.ndarray
    items: np.ndarray
    targets: np.ndarray


def as_batch(data):
    if isinstance(data, Batch):
        return data
    if hasattr(data, "score"):
        return Batch(data.users, data.items, data.score)
    users, items, targets = data
    return Batch(np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64), np.asarray(targets, dtype=float))


def _degrees(tables):
    if tables is None or tables.user_degree is None:
        return None
    return {"user": tables.user_degree, "item": tables.item_degree}


def _penalty(params, cache, cfg):
    """L2 terms on the parameters each record touches (biases and MLPs excluded)."""
    kind = params.kind
    P, Q = params.blocks["P"], params.blocks["Q"]
    total = np.sum(P[cache.users] ** 2) + np.sum(Q[cache.items] ** 2)
    for sc in cache.slots:
        total += np.sum(sc.emb**2)
    total *= cfg.l2
    if kind.weighting == "weighted":
        alpha, beta = params.blocks["alpha"], params.blocks["beta"]
        wt = 0.0
        for sc in cache.slots:
            if sc.slot == "user":
                wt += np.sum(alpha[cache.users] ** 2) + np.sum(beta[sc.rows] ** 2)
            else:
                wt += np.sum(alpha[sc.rows] ** 2) + np.sum(beta[cache.items] ** 2)
        total += cfg.l2_weight * wt
    return total


def _check_params(params, cfg):
    if params.kind is not cfg.kind:
        raise ConfigError(f"parameters are {params.kind.value} but config says {cfg.kind.value}")


def _objective_value(batch, params, cfg, tables):
    batch = as_batch(batch)
    tables = tables or FeedbackTables()
    rows = batch_rows(params, tables, batch.users, batch.items)
    cache = forward(params, batch.users, batch.items, rows, _degrees(tables))
    return np.sum((cache.pred - batch.targets) ** 2) + _penalty(params, cache, cfg)


def objective(batch, params, cfg, tables=None):
    """Sum of squared errors over the batch plus per-record L2 penalties."""
    _check_params(params, cfg)
    return float(_objective_value(batch, params, cfg, tables))


class Gradients:
    """Gradient in sparse form: row updates per table, dense arrays for shared blocks."""

    def __init__(self):
        self.sparse = {}
        self.dense = {}

    def add_rows(self, name, idx, vals):
        self.sparse.setdefault(name, []).append((np.ravel(idx), vals.reshape(len(np.ravel(idx)), -1)))

    def add_dense(self, name, grad):
        if name in self.dense:
            self.dense[name] = self.dense[name] + grad
        else:
            self.dense[name] = np.asarray(grad, dtype=np.float64)

    def merged(self, name):
        parts = self.sparse[name]
        if len(parts) == 1:
            return parts[0]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def apply(self, params, step):
        """``params -= step * grad``; repeated rows accumulate."""
        for name in self.sparse:
            idx, vals = self.merged(name)
            kernels.scatter_add_rows(params.blocks[name], idx, vals, -step)
        for name, g in self.dense.items():
            params.blocks[name] -= step * g

    def to_dense(self, params):
        out = {name: np.zeros_like(arr) for name, arr in params.blocks.items()}
        for name in self.sparse:
            idx, vals = self.merged(name)
            kernels.scatter_add_rows(out[name], idx, vals, 1.0)
        for name, g in self.dense.items():
            out[name] += np.reshape(g, out[name].shape)
        return out


def backward(params, cache, targets, cfg):
    """Exact gradient of :func:`objective` given the forward cache."""
    blocks = params.blocks
    kind = params.kind
    users, items = cache.users, cache.items
    grads = Gradients()

    g = 2.0 * (cache.pred - targets) * cache.dpred
    gU = g[:, None] * cache.V
    gV = g[:, None] * cache.U
    gP = gU.copy()
    gQ = gV.copy()
    grads.add_rows("bu", users, g)
    grads.add_rows("bi", items, g)
    grads.add_dense("b", np.array([g.sum()]))

    for sc in cache.slots:
        table_name, owner, _ = SLOTS[sc.slot]
        g_agg = gU if owner == "user" else gV
        g_emb = sc.coef[:, :, None] * g_agg[:, None, :]
        if kind.weighting in ("weighted", "attentive"):
            g_coef = np.einsum("bkd,bd->bk", sc.emb, g_agg)
        if kind.weighting == "weighted":
            alpha, beta = blocks["alpha"], blocks["beta"]
            if sc.slot == "user":
                a_u, b_rows = alpha[users], beta[sc.rows]
                grads.add_rows("alpha", users, np.einsum("bk,bkd->bd", g_coef, b_rows) + 2 * cfg.l2_weight * a_u)
                grads.add_rows("beta", sc.rows, g_coef[:, :, None] * a_u[:, None, :] + 2 * cfg.l2_weight * b_rows)
            else:
                a_rows, b_i = alpha[sc.rows], beta[items]
                grads.add_rows("alpha", sc.rows, g_coef[:, :, None] * b_i[:, None, :] + 2 * cfg.l2_weight * a_rows)
                grads.add_rows("beta", items, np.einsum("bk,bkd->bd", g_coef, a_rows) + 2 * cfg.l2_weight * b_i)
        elif kind.weighting == "attentive":
            mlp_name = MLP_OF_SLOT[sc.slot]
            g_scores = softmax_backward(sc.coef, g_coef, params.temperature)
            gW, gc, g_cond, g_x = mlp_backward(params.mlp(mlp_name), sc.mlp_acts, g_scores)
            gc[-1] = np.zeros_like(gc[-1])  # output bias cancels in the softmax
            for l in range(len(gW)):
                grads.add_dense(f"{mlp_name}.W{l}", gW[l])
                grads.add_dense(f"{mlp_name}.c{l}", gc[l])
            if owner == "user":
                gP += g_cond
            else:
                gQ += g_cond
            g_emb = g_emb + g_x
        g_emb = g_emb + 2 * cfg.l2 * sc.emb
        grads.add_rows(table_name, sc.rows, g_emb.reshape(-1, g_emb.shape[-1]))

    gP += 2 * cfg.l2 * blocks["P"][users]
    gQ += 2 * cfg.l2 * blocks["Q"][items]
    grads.add_rows("P", users, gP)
    grads.add_rows("Q", items, gQ)
    return grads


def forward_backward(batch, params, cfg, tables=None):
    """Objective value and sparse gradient for one batch."""
    batch = as_batch(batch)
    tables = tables or FeedbackTables()
    rows = batch_rows(params, tables, batch.users, batch.items)
    cache = forward(params, batch.users, batch.items, rows, _degrees(tables))
    loss = float(np.sum((cache.pred - batch.targets) ** 2) + _penalty(params, cache, cfg))
    return loss, backward(params, cache, batch.targets, cfg), cache


def gradients(batch, params, cfg, tables=None):
    """Dense gradient of :func:`objective`, one array per parameter block."""
    _check_params(params, cfg)
    _, grads, _ = forward_backward(batch, params, cfg, tables)
    return grads.to_dense(params)


def _central_difference(f, work, flat, j, eps):
    orig = flat[j]
    flat[j] = orig + eps
    f_plus = f(work)
    flat[j] = orig - eps
    f_minus = f(work)
    flat[j] = orig
    return float((f_plus - f_minus) / (2 * eps))


def _quiet_scalars(f, params, analytic, eps, seed=0):
    """Masks of scalars with zero analytic gradient that the objective ignores.

    All zero-gradient scalars are shifted together by random amounts of size
    ``eps``; if the objective is bitwise unchanged, each of their central
    differences is exactly zero and per-scalar differencing can be skipped.
    Otherwise the masks are empty and every scalar is differenced.
    """
    masks = {name: g == 0 for name, g in analytic.items()}
    probe = params.copy()
    rng = np.random.default_rng(seed)
    for name, m in masks.items():
        probe.blocks[name][m] += eps * rng.choice([-1.0, 1.0], size=int(m.sum()))
    if f(probe) != f(params):
        return {name: np.zeros_like(m) for name, m in masks.items()}
    return masks


def finite_diff_check(params, batch, cfg, tables=None, eps=1e-5, per_block=False, recheck_above=1e-6):
    """Largest relative gap between analytic and central-difference gradients.

    Relative error per scalar is ``|a - n| / max(|a|, |n|, 1e-8)``. Differences
    are taken in float64; any scalar whose error exceeds ``recheck_above`` is
    differenced again with the objective evaluated in extended precision,
    since float64 round-off divided by ``2 * eps`` (about 1e-11) swamps
    scalars whose true gradient is below 1e-7.
    """
    analytic = gradients(batch, params, cfg, tables)
    batch = as_batch(batch)
    tables = tables or FeedbackTables()
    rows = batch_rows(params, tables, batch.users, batch.items)
    degrees = _degrees(tables)

    def f(p):
        cache = forward(p, batch.users, batch.items, rows, degrees)
        return np.sum((cache.pred - batch.targets) ** 2) + _penalty(p, cache, cfg)

    quiet = _quiet_scalars(f, params, analytic, eps)
    work = params.copy()
    wide = None
    worst = {}
    for name, arr in work.blocks.items():
        flat = arr.reshape(-1)
        an = analytic[name].reshape(-1)
        skip = quiet[name].reshape(-1)
        err = 0.0
        for j in range(flat.size):
            if skip[j]:
                continue
            num = _central_difference(f, work, flat, j, eps)
            e = abs(an[j] - num) / max(abs(an[j]), abs(num), 1e-8)
            if e > recheck_above and np.finfo(np.longdouble).eps < np.finfo(np.float64).eps:
                if wide is None:
                    wide = params.copy()
                    wide.blocks = {k: v.astype(np.longdouble) for k, v in wide.blocks.items()}
                num = _central_difference(f, wide, wide.blocks[name].reshape(-1), j, eps)
                e = abs(an[j] - num) / max(abs(an[j]), abs(num), 1e-8)
            err = max(err, e)
        worst[name] = err
    total = max(worst.values()) if worst else 0.0
    return (total, worst) if per_block else total


def _nonfinite_block(params):
    for name, arr in params.blocks.items():
        if not np.all(np.isfinite(arr)):
            return name
    return None


def new_params(train, cfg):
    return init_params(
        cfg.kind, train.n_users, train.n_items, cfg.K, cfg.Kp, cfg.k, cfg.hidden,
        seed=cfg.seed, init_scale=cfg.init_scale, mlp_init=cfg.mlp_init, weight_init=cfg.weight_init,
        temperature=cfg.temperature,
        norm=cfg.norm, output=cfg.output, mask_pad=cfg.mask_pad,
    )


def train(split, tables, cfg, test=None, params=None, callback=None):
    """Mini-batch SGD on the training records.

    ``split`` is a :class:`~graphcf.data.SplitDataset` or a training
    :class:`~graphcf.data.Dataset` (then ``test`` is optional). Each epoch
    reshuffles with a generator seeded from ``cfg.seed``. ``train_rmse`` in
    the report is measured on the batch predictions made during the epoch.
    """
    if hasattr(split, "train"):
        train_set, test = split.train, split.test
    else:
        train_set = split
    tables = tables or FeedbackTables()
    missing = [s for s in cfg.kind.feedback_slots if getattr(tables, s) is None]
    if missing:
        raise ConfigError(f"{cfg.kind.value} needs feedback tables for {missing}")
    params = new_params(train_set, cfg) if params is None else params
    _check_params(params, cfg)
    report = LossReport()
    rng = np.random.default_rng([cfg.seed, 1])
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
    batch = as_batch(train_set)
    n = len(batch.users)
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        sq_err = 0.0
        obj = 0.0
        for lo in range(0, n, cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            mb = Batch(batch.users[sel], batch.items[sel], batch.targets[sel])
            loss, grads, cache = forward_backward(mb, params, cfg, tables)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, _nonfinite_block(params) or "objective")
            sq_err += float(np.sum((cache.pred - mb.targets) ** 2))
            obj += loss
            opt.step(params, grads)
        bad = _nonfinite_block(params)
        if bad is not None:
            raise TrainingDiverged(epoch, bad)
        report.train_rmse.append(math.sqrt(sq_err / n) if n else float("nan"))
        report.objective.append(obj)
        if test is not None and len(test):
            test_rmse = rmse(predict_batch(params, tables, test.users, test.items), test.score)
            if not math.isfinite(test_rmse):
                raise TrainingDiverged(epoch, "predictions")
            report.test_rmse.append(test_rmse)
        else:
            report.test_rmse.append(float("nan"))
        report.seconds.append(time.perf_counter() - start)
        logger.info(
            "%s epoch %d: train %.6f test %.6f (%.1fs)",
            cfg.kind.value, epoch, report.train_rmse[-1], report.test_rmse[-1], report.seconds[-1],
        )
        if cfg.checkpoint_every and cfg.checkpoint_path and epoch % cfg.checkpoint_every == 0:
            save_params(params, cfg.checkpoint_path)
        if callback is not None:
            callback(epoch, params, report)
    return params, report
