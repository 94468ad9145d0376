"""Minimal dense layers with reverse-mode gradients, and two optimizers."""
from __future__ import annotations

import numpy as np


def init_layers(rng, widths):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for a chain of dense layers."""
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append([W, b])
    return layers


LEAK = 0.2
ACTIVATIONS = ("tanh", "lrelu")


def _act(pre, act):
    if act == "tanh":
        return np.tanh(pre)
    return np.where(pre > 0, pre, LEAK * pre)


def _act_grad(out, act):
    if act == "tanh":
        return 1.0 - out * out
    return np.where(out > 0, 1.0, LEAK)


def mlp_forward(x, layers, final_act=False, act="tanh"):
    """``act`` on every hidden layer; the last layer is linear unless ``final_act``.

    Returns (output, cache) where cache holds each layer's input and output.
    """
    cache = []
    h = x
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        pre = h @ W + b
        out = _act(pre, act) if (k < last or final_act) else pre
        cache.append((h, out))
        h = out
    return h, cache


def mlp_backward(d_out, layers, cache, final_act=False, act="tanh"):
    """Gradients for every (W, b) plus the gradient w.r.t. the MLP input."""
    grads = [None] * len(layers)
    last = len(layers) - 1
    d = d_out
    for k in range(last, -1, -1):
        W, _ = layers[k]
        h_in, out = cache[k]
        if k < last or final_act:
            d = d * _act_grad(out, act)
        d2 = d.reshape(-1, d.shape[-1])
        grads[k] = [h_in.reshape(-1, h_in.shape[-1]).T @ d2, d2.sum(axis=0)]
        d = d @ W.T
    return grads, d


def flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.empty(0)


def unflatten(vec, like):
    out, pos = [], 0
    for a in like:
        out.append(np.asarray(vec[pos:pos + a.size]).reshape(a.shape))
        pos += a.size
    return out


class SGD:
    """Gradient descent with optional heavy-ball momentum. Updates arrays in place."""

    def __init__(self, params, lr, momentum=0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, g, v in zip(self.params, grads, self.velocity):
            if self.momentum:
                v *= self.momentum
                v += g
                p -= self.lr * v
            else:
                p -= self.lr * g


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name, params, lr, momentum=0.9, beta1=0.9):
    if name == "adam":
        return Adam(params, lr, betas=(beta1, 0.999))
    if name == "sgd":
        return SGD(params, lr, momentum)
    raise ValueError(f"unknown optimizer {name!r}")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))
