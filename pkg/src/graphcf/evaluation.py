"""RMSE, sparse-user slices, attention grouped by rating and learning-curve comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import SLOTS
from .predict import attention_rows, predict_batch
from .weighting import ConfigError


def rmse(pred, truth):
    """Root mean squared error of two equal-length, nonempty sequences."""
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse of an empty sequence")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass
class SliceRow:
    label: str
    threshold: int
    count: int
    rmse: float | None


@dataclass
class RatingGroup:
    rating: int
    count: int
    mean: float | None


@dataclass
class EvalReport:
    overall: float
    n_test: int
    slices: list = field(default_factory=list)
    attention: dict = field(default_factory=dict)

    def to_csv(self, path):
        """Sections separated by a blank line: overall, slices, then one per attention side."""
        lines = ["section,label,count,rmse", f"overall,all,{self.n_test},{self.overall!r}"]
        for row in self.slices:
            lines.append(f"slice,{row.label},{row.count},{_fmt(row.rmse)}")
        if self.attention:
            lines += ["", "section,rating,count,mean_attention"]
            for side, groups in self.attention.items():
                lines += [f"attention_{side},{g.rating},{g.count},{_fmt(g.mean)}" for g in groups]
        _write(path, lines)

    def summary(self):
        out = [f"test RMSE {self.overall:.6f} over {self.n_test} records"]
        for row in self.slices:
            val = "n/a" if row.rmse is None else f"{row.rmse:.6f}"
            out.append(f"  {row.label}: RMSE {val} over {row.count} records")
        for side, groups in self.attention.items():
            cells = ", ".join(f"{g.rating}: {'n/a' if g.mean is None else f'{g.mean:.5f}'} ({g.count})" for g in groups)
            out.append(f"  attention [{side}] {cells}")
        return "\n".join(out)


def _fmt(x):
    return "" if x is None else repr(float(x))


def _write(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _check_coverage(params, tables, test):
    if len(test) == 0:
        raise ValueError("test set is empty")
    if test.users.max() >= params.n_users or test.items.max() >= params.n_items:
        raise IndexError("test set references entities the model does not know")
    for slot in params.kind.feedback_slots:
        table = getattr(tables, slot, None) if tables is not None else None
        if table is None:
            raise ConfigError(f"{params.kind.value} needs the '{slot}' feedback table")
        owners = test.users if SLOTS[slot][1] == "user" else test.items
        if owners.max() >= len(table.rows):
            raise KeyError(f"'{slot}' table has no row for entity {int(owners.max())}")


def predictions_for(params, tables, test):
    _check_coverage(params, tables, test)
    return predict_batch(params, tables, test.users, test.items)


def evaluate(params, tables, test):
    """Overall test RMSE with the kind's predict function."""
    return rmse(predictions_for(params, tables, test), test.score)


def sparse_slice_rmse(params, tables, test, graph, thresholds=(10, 15), pred=None):
    """RMSE over test records whose user has fewer than ``tau`` train ratings.

    Degree is the true train degree, not the padded row width. Empty slices
    have count 0 and no RMSE.
    """
    if pred is None:
        pred = predictions_for(params, tables, test)
    degree = graph.user_degree[test.users]
    rows = []
    for tau in sorted(thresholds):
        sel = degree < tau
        n = int(sel.sum())
        rows.append(SliceRow(f"degree<{tau}", int(tau), n, rmse(pred[sel], test.score[sel]) if n else None))
    return rows


def _edge_ratings(graph, owners, entries, side):
    """Raw rating of each (owner, entry) pair, 0 where it is not a train edge."""
    indptr, ids, raw = graph.side_csr(side)
    n_cols = graph.n_entities("item" if side == "user" else "user")
    # CSR rows are sorted by neighbor id, so row-major keys are sorted too
    keys = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr)) * n_cols + ids
    query = owners.astype(np.int64) * n_cols + entries
    if len(keys) == 0:
        return np.zeros(len(query), dtype=np.int64)
    pos = np.minimum(np.searchsorted(keys, query), len(keys) - 1)
    return np.where(keys[pos] == query, raw[pos], 0)


def attention_by_rating(params, tables, graph, ratings=None):
    """Mean attention weight per raw rating over step-one pairs that are train edges.

    Returns ``{"user": [...], "item": [...], "pooled": [...]}`` of
    :class:`RatingGroup`. PAD entries and sampled pairs that are not train
    edges are skipped.
    """
    if params.kind.weighting != "attentive":
        raise ConfigError(f"{params.kind.value} has no attention network")
    if ratings is None:
        ratings = range(1, 6)
    ratings = [int(r) for r in ratings]
    out, pooled_sum, pooled_cnt = {}, {r: 0.0 for r in ratings}, {r: 0 for r in ratings}
    for slot in ("user", "item"):
        if slot not in params.kind.feedback_slots:
            continue
        table = getattr(tables, slot)
        a = attention_rows(params, tables, slot)
        owners = np.repeat(np.arange(table.rows.shape[0]), table.k)
        entries = table.rows.reshape(-1)
        weights = a.reshape(-1)
        real = entries >= 0
        r = np.zeros(len(entries), dtype=np.int64)
        r[real] = _edge_ratings(graph, owners[real], entries[real], slot)
        groups = []
        for rating in ratings:
            sel = r == rating
            n = int(sel.sum())
            total = float(weights[sel].sum())
            pooled_sum[rating] += total
            pooled_cnt[rating] += n
            groups.append(RatingGroup(rating, n, total / n if n else None))
        out[slot] = groups
    out["pooled"] = [
        RatingGroup(r, pooled_cnt[r], pooled_sum[r] / pooled_cnt[r] if pooled_cnt[r] else None) for r in ratings
    ]
    return out


def attention_pairs(params, tables, graph, path):
    """Per-pair attention dump of the step-one slots.

    Columns: slot, entity, feedback, raw score, normalized weight and the raw
    rating when the pair is a train edge (blank otherwise). PAD entries are
    skipped.
    """
    if params.kind.weighting != "attentive":
        raise ConfigError(f"{params.kind.value} has no attention network")
    lines = ["slot,entity,feedback,score,weight,rating"]
    for slot in ("user", "item"):
        if slot not in params.kind.feedback_slots:
            continue
        table = getattr(tables, slot)
        raw, a = attention_rows(params, tables, slot, with_scores=True)
        owners = np.repeat(np.arange(table.rows.shape[0]), table.k)
        entries = table.rows.reshape(-1)
        real = entries >= 0
        r = np.zeros(len(entries), dtype=np.int64)
        r[real] = _edge_ratings(graph, owners[real], entries[real], slot)
        raw, a = raw.reshape(-1), a.reshape(-1)
        for n in np.flatnonzero(real):
            rating = str(int(r[n])) if r[n] else ""
            lines.append(f"{slot},{owners[n]},{entries[n]},{float(raw[n])!r},{float(a[n])!r},{rating}")
    _write(path, lines)
    return len(lines) - 1


def full_report(params, tables, test, graph, thresholds=(10, 15), with_attention=False):
    pred = predictions_for(params, tables, test)
    report = EvalReport(rmse(pred, test.score), len(test))
    report.slices = sparse_slice_rmse(params, tables, test, graph, thresholds, pred=pred)
    if with_attention:
        report.attention = attention_by_rating(params, tables, graph, test.scale.values)
    return report


@dataclass
class CurveComparison:
    epoch_a: int
    epoch_b: int
    final_a: float
    final_b: float
    ratio: float

    def to_csv(self, path, names=("a", "b")):
        _write(path, [
            "curve,converged_epoch,final_test_rmse",
            f"{names[0]},{self.epoch_a},{self.final_a!r}",
            f"{names[1]},{self.epoch_b},{self.final_b!r}",
            f"ratio_b_over_a,{self.ratio!r},",
        ])


def convergence_epoch(curve, eps=0.0005):
    """First (1-based) epoch whose value is within ``eps`` of the last one."""
    curve = np.asarray(curve, dtype=float)
    if curve.size == 0:
        raise ValueError("empty learning curve")
    close = np.abs(curve - curve[-1]) <= eps
    return int(np.argmax(close)) + 1


def compare_learning_curves(report_a, report_b, eps=0.0005):
    """Convergence epochs of two test-RMSE curves and ``epoch_b / epoch_a``."""
    ca, cb = _curve(report_a), _curve(report_b)
    ea, eb = convergence_epoch(ca, eps), convergence_epoch(cb, eps)
    return CurveComparison(ea, eb, float(ca[-1]), float(cb[-1]), eb / ea)


def _curve(report):
    curve = report.test_rmse if hasattr(report, "test_rmse") else report
    if not len(curve) or any(math.isnan(x) for x in curve):
        raise ValueError("learning curve needs a test RMSE for every epoch")
    return curve
