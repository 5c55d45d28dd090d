"""Small multilayer perceptrons with hand-written reverse mode.

Parameters live in a flat dict keyed ``"<net>.w<i>"`` / ``"<net>.b<i>"`` so a
whole model can be updated, clipped and serialized as one mapping.
"""

import numpy as np


def init_mlp(params, name, sizes, rng, dtype=np.float32, last_scale=1.0):
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = np.sqrt(2.0 / fan_in)
        if i == len(sizes) - 2:
            scale *= last_scale
        params[f"{name}.w{i}"] = (rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype)
        params[f"{name}.b{i}"] = np.zeros(fan_out, dtype=dtype)


def n_layers(params, name):
    k = 0
    while f"{name}.w{k}" in params:
        k += 1
    return k


def _act(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    return np.tanh(x)


def forward(params, name, x, activation="relu"):
    """Hidden layers use `activation`, the output layer is linear."""
    cache = []
    L = n_layers(params, name)
    h = x
    for i in range(L):
        z = h @ params[f"{name}.w{i}"] + params[f"{name}.b{i}"]
        cache.append((h, z))
        h = z if i == L - 1 else _act(z, activation)
    return h, cache


def backward(params, name, cache, gy, grads, activation="relu"):
    """Accumulate parameter gradients into `grads` and return d(loss)/d(input)."""
    L = len(cache)
    g = gy
    for i in reversed(range(L)):
        h, z = cache[i]
        if i < L - 1:
            if activation == "relu":
                g = g * (z > 0)
            else:
                g = g * (1.0 - np.tanh(z) ** 2)
        kw, kb = f"{name}.w{i}", f"{name}.b{i}"
        grads[kw] = grads.get(kw, 0.0) + h.T @ g
        grads[kb] = grads.get(kb, 0.0) + g.sum(axis=0)
        g = g @ params[kw].T
    return g


def minmax(x, eps=1e-6):
    """Scale each row of `x` to [0, 1]."""
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    span = hi - lo + eps
    s = (x - lo) / span
    return s, (s, span, x.argmin(axis=-1), x.argmax(axis=-1))


def minmax_backward(cache, gs):
    s, span, i_lo, i_hi = cache
    gx = gs / span
    rows = np.arange(gs.shape[0])
    gx[rows, i_lo] += np.sum(gs * (s - 1.0), axis=-1) / span[:, 0]
    gx[rows, i_hi] += np.sum(gs * -s, axis=-1) / span[:, 0]
    return gx
