"""Minimal dense-network primitives with hand-written backpropagation.

Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]`` of float64
arrays; ``W_k`` has shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import numpy as np


def init_dense(widths, rng):
    params = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(params, x, relu_last):
    """Run the stack; returns ``(output, cache)`` where cache holds layer inputs and pre-activations."""
    cache = []
    a = x
    n_layers = len(params) // 2
    for k in range(n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        pre = a @ w + b
        cache.append((a, pre))
        a = np.maximum(pre, 0.0) if (k < n_layers - 1 or relu_last) else pre
    return a, cache


def backward(params, cache, grad_out, relu_last):
    """Gradients for every parameter plus the gradient w.r.t. the input."""
    n_layers = len(params) // 2
    grads = [None] * len(params)
    g = grad_out
    for k in reversed(range(n_layers)):
        a, pre = cache[k]
        if k < n_layers - 1 or relu_last:
            g = g * (pre > 0)
        grads[2 * k] = a.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params[2 * k].T
    return grads, g


def widths_of(params):
    if not params:
        return []
    return [params[0].shape[0]] + [params[k].shape[1] for k in range(0, len(params), 2)]


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
