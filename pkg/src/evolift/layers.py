"""Parameter trees and the small building blocks shared by every model module.

Parameters live in nested dicts of :class:`Tensor` leaves. ``flatten`` gives
the canonical dotted paths used by the optimizer and checkpoints.
"""

import numpy as np

from . import tensor as T
from .tensor import Tensor


def flatten(tree, prefix=""):
    """Nested dict -> ``{dotted.path: Tensor}`` in sorted key order."""
    flat = {}
    for key in sorted(tree):
        value = tree[key]
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, path + "."))
        else:
            flat[path] = value
    return flat


def unflatten(flat):
    tree = {}
    for path, value in flat.items():
        node = tree
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return tree


def map_tree(fn, tree):
    return {k: map_tree(fn, v) if isinstance(v, dict) else fn(v) for k, v in tree.items()}


def zeros_like_tree(tree):
    return map_tree(lambda t: Tensor(np.zeros(t.shape)), tree)


# -- initializers -----------------------------------------------------------


def init_linear(rng, c_in, c_out, bias=True, std=None):
    std = 1.0 / np.sqrt(c_in) if std is None else std
    p = {"w": Tensor(rng.normal(0.0, std, size=(c_in, c_out)))}
    if bias:
        p["b"] = Tensor(np.zeros(c_out))
    return p


def init_layer_norm(c):
    return {"g": Tensor(np.ones(c)), "b": Tensor(np.zeros(c))}


def init_attention(rng, c, heads, gated=False):
    if c % heads:
        raise ValueError(f"width {c} not divisible by {heads} heads")
    p = {
        "q": init_linear(rng, c, c, bias=False),
        "k": init_linear(rng, c, c, bias=False),
        "v": init_linear(rng, c, c, bias=False),
        "o": init_linear(rng, c, c, bias=False, std=0.0),
    }
    if gated:
        p["gate"] = init_linear(rng, c, c)
        p["gate"]["b"] = Tensor(np.ones(c))
    return p


def init_transition(rng, c, factor=4):
    return {
        "ln": init_layer_norm(c),
        "fc1": init_linear(rng, c, factor * c),
        "fc2": init_linear(rng, factor * c, c, std=0.0),
    }


# -- apply ------------------------------------------------------------------


def dense(p, x):
    return T.linear(x, p["w"], p.get("b"))


def norm(p, x):
    return T.layer_norm(x, p["g"], p["b"])


def attention(p, x, heads, bias=None, return_weights=False):
    """Multi-head self-attention over axis -2 of ``x`` (shape ``(..., L, c)``).

    ``bias`` is an additive logit term of shape ``(..., heads, L, L)``. When
    the tree has a ``gate`` entry the head outputs are multiplied by
    ``sigmoid(gate(x))`` before the output projection. Returns the update
    only; callers add the residual.
    """
    *lead, length, c = x.shape
    dh = c // heads

    def split(t):
        return t.reshape(*lead, length, heads, dh).swapaxes(-3, -2)

    q = split(dense(p["q"], x))
    k = split(dense(p["k"], x))
    v = split(dense(p["v"], x))
    logits = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    if bias is not None:
        logits = logits + bias
    weights = T.softmax_lastdim(logits)
    o = T.matmul(weights, v).swapaxes(-3, -2).reshape(*lead, length, c)
    if "gate" in p:
        o = T.sigmoid(dense(p["gate"], x)) * o
    out = dense(p["o"], o)
    return (out, weights) if return_weights else out


def pair_bias(w, pair, heads):
    """Project ``pair`` (``(..., A, B, d_p)``) to per-head logits ``(..., heads, A, B)``."""
    b = T.linear(pair, w)
    if b.shape[-1] != heads:
        raise ValueError(f"pair-bias projection yields {b.shape[-1]} heads, expected {heads}")
    return b.swapaxes(-1, -2).swapaxes(-3, -2)


def expand_bias(bias, axis_len):
    """Insert a broadcast axis of length ``axis_len`` before the head axis."""
    *lead, h, a, b = bias.shape
    return T.broadcast_to(bias.reshape(*lead, 1, h, a, b), (*lead, axis_len, h, a, b))


def transition(p, x, rate=0.0, rng=None):
    """Pre-norm feed-forward update ``fc2(gelu(fc1(ln(x))))`` (no residual)."""
    h = T.gelu(dense(p["fc1"], norm(p["ln"], x)))
    return T.dropout(dense(p["fc2"], h), rate, rng)
