"""Non-uniform feedback weights: factorized pair weights and the attention MLP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Inconsistent model or attention configuration."""


@dataclass
class AttentionConfig:
    temperature: float = 0.1
    hidden: tuple = (32,)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


@dataclass
class MlpParams:
    """Layers as ``(weight, bias)`` pairs; ReLU between layers, linear output of width 1.

    ``weights[l]`` has shape ``(in, out)``. The arrays may be views into a
    :class:`~graphcf.model.ModelParams`, so updates through either are shared.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("an MLP needs one bias per weight matrix and at least one layer")
        for l, (W, c) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or c.shape != (W.shape[1],):
                raise ConfigError(f"layer {l}: weight {W.shape} and bias {c.shape} do not match")
            if l and W.shape[0] != self.weights[l - 1].shape[1]:
                raise ConfigError(f"layer {l} input width {W.shape[0]} != previous output")
        if self.weights[-1].shape[1] != 1:
            raise ConfigError("final layer must have a single output")

    @property
    def in_width(self):
        return self.weights[0].shape[0]

    @classmethod
    def init(cls, in_width, hidden=(32,), rng=None, init_scale=0.01):
        rng = np.random.default_rng() if rng is None else rng
        widths = [in_width, *hidden, 1]
        weights = [rng.uniform(-init_scale, init_scale, size=(a, b)) for a, b in zip(widths, widths[1:])]
        biases = [np.zeros(b) for b in widths[1:]]
        return cls(weights, biases)


def pair_weight(alpha_u, beta_j):
    """Weight of one (entity, feedback) pair: the inner product of its two factors."""
    alpha_u, beta_j = np.asarray(alpha_u), np.asarray(beta_j)
    if alpha_u.shape != beta_j.shape:
        raise ConfigError(f"factor widths differ: {alpha_u.shape} vs {beta_j.shape}")
    return float(alpha_u @ beta_j)


def weighted_sum(coef, emb):
    """``sum_j coef[..., j] * emb[..., j, :]``; every aggregation goes through here."""
    return np.einsum("...k,...kd->...d", coef, emb)


def aggregate_weighted(row, table, entity_factor, factor_table):
    """Feedback aggregate with pair weights ``<entity_factor, factor_table[j]>``.

    User side: ``entity_factor = alpha[u]``, ``factor_table = beta``. Item
    side: ``entity_factor = beta[i]``, ``factor_table = alpha``.
    """
    row = np.asarray(row)
    coef = np.einsum("d,kd->k", entity_factor, factor_table[row])
    return weighted_sum(coef, table[row])


def mlp_hidden(mlp, x, cond=None):
    """Forward pass up to (excluding) the output bias.

    The input is ``x``, or the concatenation ``[cond, x]`` when ``cond`` is
    given with one row per leading index of ``x`` (shape ``x.shape[:-2] +
    (c,)``); the concatenation is never materialized. Returns the pre-bias
    scores of shape ``x.shape[:-1]`` and the activations :func:`mlp_backward`
    needs.
    """
    W0 = mlp.weights[0]
    if cond is None:
        a = x @ W0
    else:
        c = cond.shape[-1]
        a = x @ W0[c:] + (cond @ W0[:c])[..., None, :]
    acts = [(cond, x)]
    last = len(mlp.weights) - 1
    for l in range(1, last + 1):
        h = np.maximum(a + mlp.biases[l - 1], 0.0)
        acts.append(h)
        a = h @ mlp.weights[l]
    return a[..., 0], acts


def mlp_backward(mlp, acts, g_out):
    """Gradients of ``sum(g_out * scores)`` w.r.t. weights, biases and the input.

    Returns ``(gW, gc, g_cond, g_x)``; ``g_cond`` is None when the forward
    pass had no ``cond``. The output-bias gradient is ``g_out.sum()``.
    """
    n_layers = len(mlp.weights)
    gW = [None] * n_layers
    gc = [None] * n_layers
    d = g_out[..., None]
    for l in range(n_layers - 1, 0, -1):
        h = acts[l]
        d2 = d.reshape(-1, d.shape[-1])
        gW[l] = h.reshape(-1, h.shape[-1]).T @ d2
        gc[l] = d2.sum(axis=0)
        d = (d @ mlp.weights[l].T) * (h > 0)
    cond, x = acts[0]
    d2 = d.reshape(-1, d.shape[-1])
    gc[0] = d2.sum(axis=0)
    W0 = mlp.weights[0]
    if cond is None:
        gW[0] = x.reshape(-1, x.shape[-1]).T @ d2
        return gW, gc, None, d @ W0.T
    c = cond.shape[-1]
    d_sum = d.sum(axis=-2)
    gW[0] = np.concatenate(
        [cond.reshape(-1, c).T @ d_sum.reshape(-1, d.shape[-1]), x.reshape(-1, x.shape[-1]).T @ d2]
    )
    return gW, gc, d_sum @ W0[:c].T, d @ W0[c:].T


def mlp_forward(mlp, entity_vec, fb_vec):
    """Raw attention score of one (entity, feedback) pair, output bias included."""
    x = np.concatenate([np.asarray(entity_vec, dtype=float), np.asarray(fb_vec, dtype=float)], axis=-1)
    if x.shape[-1] != mlp.in_width:
        raise ConfigError(f"input width {x.shape[-1]} != MLP input width {mlp.in_width}")
    s, _ = mlp_hidden(mlp, x)
    s = s + mlp.biases[-1][0]
    return float(s) if np.ndim(s) == 0 else s


def softmax_temperature(scores, t, mask=None):
    """``exp(s_j / t) / sum_l exp(s_l / t)`` over the last axis, max-shifted.

    ``mask`` (bool, same shape) marks entries to keep; masked-out entries get
    weight 0 and a row with nothing kept is all zeros.
    """
    if not t > 0:
        raise ConfigError(f"temperature must be positive, got {t}")
    s = np.asarray(scores)
    s = s.astype(np.result_type(s, np.float64), copy=False) / t
    if mask is None:
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    s = np.where(mask, s, -np.inf)
    top = np.max(s, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(s - top)
    total = e.sum(axis=-1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def softmax_backward(a, g_a, t):
    """Gradient w.r.t. raw scores given ``a = softmax(s / t)`` and ``g_a = dL/da``."""
    inner = np.sum(a * g_a, axis=-1, keepdims=True)
    return a * (g_a - inner) / t


def aggregate_attentive(row, table, entity_vec, mlp, t, mask=None):
    """Attention-weighted aggregate of ``table[row]`` and the attention weights.

    The output bias of the MLP shifts every score of a row equally and
    cancels in the softmax, so it is left out here.
    """
    row = np.asarray(row)
    emb = table[row]
    s, _ = mlp_hidden(mlp, emb, np.asarray(entity_vec, dtype=float))
    a = softmax_temperature(s, t, mask)
    return weighted_sum(a, emb), a
