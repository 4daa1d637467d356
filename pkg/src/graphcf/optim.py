"""Update rules applied to a :class:`~graphcf.trainer.Gradients` per mini-batch."""

from __future__ import annotations

import numpy as np

from .weighting import ConfigError

OPTIMIZERS = ("sgd", "adam")


class Sgd:
    """``theta -= lr * grad``; sparse rows go through the scatter kernel."""

    def __init__(self, learning_rate):
        self.learning_rate = learning_rate

    def step(self, params, grads):
        grads.apply(params, self.learning_rate)


class Adam:
    """Adam with bias correction over every block (moments kept dense)."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr = self.learning_rate * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for name, g in grads.to_dense(params).items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params.blocks[name] -= lr * m / (np.sqrt(v) + self.eps)


def make_optimizer(name, learning_rate):
    if name == "sgd":
        return Sgd(learning_rate)
    if name == "adam":
        return Adam(learning_rate)
    raise ConfigError(f"unknown optimizer {name!r}; valid: {', '.join(OPTIMIZERS)}")
