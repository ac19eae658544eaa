"""Spatiotemporal Evoformer blocks.

Sequence features ``S`` have shape ``(..., N, J, d_s)`` and pair features
``P`` have shape ``(..., J, J, d_p)`` with identical leading batch extents.
Every sublayer is pre-norm with a residual connection, so zeroing its output
projection turns it into an exact identity.
"""

import numpy as np

from . import tensor as T
from .errors import CapacityError, ShapeError
from .layers import (
    attention,
    dense,
    expand_bias,
    init_attention,
    init_layer_norm,
    init_linear,
    init_transition,
    norm,
    pair_bias,
    transition,
)
from .tensor import Tensor


# -- initialisation ---------------------------------------------------------


def init_embedding(rng, n_joints, d_s, max_frames, pos_std=0.02):
    return {
        "w": Tensor(rng.normal(0.0, 1.0 / np.sqrt(2.0), size=(n_joints, 2, d_s))),
        "b": Tensor(np.zeros((n_joints, d_s))),
        "pos": Tensor(rng.normal(0.0, pos_std, size=(max_frames, d_s))),
    }


def init_row_attention(rng, d_s, d_p, heads):
    return {
        "ln": init_layer_norm(d_s),
        "att": init_attention(rng, d_s, heads),
        "pair": {"w": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_p), size=(d_p, heads)))},
    }


def _init_triangle_update(rng, d_p):
    return {
        "ln": init_layer_norm(d_p),
        "a_gate": init_linear(rng, d_p, d_p),
        "a_proj": init_linear(rng, d_p, d_p),
        "b_gate": init_linear(rng, d_p, d_p),
        "b_proj": init_linear(rng, d_p, d_p),
        "gate": init_linear(rng, d_p, d_p),
        "ln_out": init_layer_norm(d_p),
        "out": init_linear(rng, d_p, d_p, std=0.0),
    }


def _init_triangle_attention(rng, d_p, heads):
    return {
        "ln": init_layer_norm(d_p),
        "att": init_attention(rng, d_p, heads, gated=True),
        "pair": {"w": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_p), size=(d_p, heads)))},
    }


def init_stevo_block(rng, d_s, d_p, d_o, heads):
    if d_s % heads or d_p % heads:
        raise ValueError(f"d_s={d_s} and d_p={d_p} must both be divisible by heads={heads}")
    return {
        "rsa": init_row_attention(rng, d_s, d_p, heads),
        "csa": {"ln": init_layer_norm(d_s), "att": init_attention(rng, d_s, heads)},
        "seq_ffn": init_transition(rng, d_s),
        "opm": {
            "ln": init_layer_norm(d_s),
            "a": init_linear(rng, d_s, d_o),
            "b": init_linear(rng, d_s, d_o),
            "out": init_linear(rng, d_o * d_o, d_p, std=0.0),
        },
        "tri_out": _init_triangle_update(rng, d_p),
        "tri_in": _init_triangle_update(rng, d_p),
        "tri_start": _init_triangle_attention(rng, d_p, heads),
        "tri_end": _init_triangle_attention(rng, d_p, heads),
        "pair_ffn": init_transition(rng, d_p),
    }


# -- sequence branch --------------------------------------------------------


def embed_sequence(pose2d, params):
    """Per-joint ``2 -> d_s`` projection (own weights for every joint) plus a
    learned per-frame position row."""
    x = pose2d if isinstance(pose2d, Tensor) else Tensor(pose2d)
    *lead, N, J, _ = x.shape
    w, pos = params["w"], params["pos"]
    if w.shape[0] != J:
        raise ShapeError(f"embedding has weights for {w.shape[0]} joints, input has {J}")
    if N > pos.shape[0]:
        raise CapacityError(f"{N} frames exceed the positional table of {pos.shape[0]} rows")
    d_s = pos.shape[1]
    rows = x.reshape(-1, J, 2).swapaxes(0, 1)  # (J, frames, 2)
    feats = T.matmul(rows, w).swapaxes(0, 1).reshape(*lead, N, J, d_s)
    feats = feats + T.broadcast_to(params["b"], (*lead, N, J, d_s))
    frame_rows = T.getitem(pos, slice(0, N)).reshape(N, 1, d_s)
    return feats + T.broadcast_to(frame_rows, (*lead, N, J, d_s))


def _check_pair(S, P):
    if S.shape[-2] != P.shape[-2] or P.shape[-3] != P.shape[-2] or S.shape[:-3] != P.shape[:-3]:
        raise ShapeError(f"sequence features {S.shape} and pair features {P.shape} disagree on joints/batch")


def rsa_update(S, P, params, heads, return_weights=False):
    """Row-wise (per-frame, across joints) attention biased by ``linear(P)``; no residual.

    ``P=None`` gives plain multi-head attention.
    """
    z = norm(params["ln"], S)
    bias = None
    if P is not None:
        _check_pair(S, P)
        bias = expand_bias(pair_bias(params["pair"]["w"], P, heads), S.shape[-3])
    return attention(params["att"], z, heads, bias=bias, return_weights=return_weights)


def rsa(S, P, params, heads, rate=0.0, rng=None):
    return S + T.dropout(rsa_update(S, P, params, heads), rate, rng)


def csa_update(S, params, heads, return_weights=False):
    """Column-wise (per-joint, across frames) attention; no residual."""
    z = norm(params["ln"], S).swapaxes(-3, -2)
    out = attention(params["att"], z, heads, return_weights=return_weights)
    if return_weights:
        return out[0].swapaxes(-3, -2), out[1]
    return out.swapaxes(-3, -2)


def csa(S, params, heads, rate=0.0, rng=None):
    return S + T.dropout(csa_update(S, params, heads), rate, rng)


# -- pair branch ------------------------------------------------------------


def outer_product_mean(a, b):
    """``F[..., i, j, p, q] = mean_n a[..., n, i, p] * b[..., n, j, q]``."""
    *lead, N, J, dp = a.shape
    dq = b.shape[-1]
    # contract frames with one batched matmul: (J*dp, N) @ (N, J*dq)
    left = a.reshape(*lead, N, J * dp).swapaxes(-1, -2)
    F = T.matmul(left, b.reshape(*lead, N, J * dq)) * (1.0 / N)
    return F.reshape(*lead, J, dp, J, dq).swapaxes(-3, -2)


def opm_update(Se, P, params):
    """``P + out(flatten(F))`` with ``F`` the outer product mean of projected ``Se``."""
    _check_pair(Se, P)
    z = norm(params["ln"], Se)
    a = dense(params["a"], z)
    b = dense(params["b"], z)
    F = outer_product_mean(a, b)
    *lead, J, _, d_o, _ = F.shape
    return P + dense(params["out"], F.reshape(*lead, J, J, d_o * d_o))


def triangle_update(P, mode, params):
    """Gated triangular multiplicative update over outgoing or incoming edges."""
    z = norm(params["ln"], P)
    a = T.sigmoid(dense(params["a_gate"], z)) * dense(params["a_proj"], z)
    b = T.sigmoid(dense(params["b_gate"], z)) * dense(params["b_proj"], z)
    if mode not in ("outgoing", "incoming"):
        raise ValueError(f"unknown triangle mode {mode!r}")
    # channels to the front: (..., c, row, col)
    a = a.swapaxes(-1, -3).swapaxes(-1, -2)
    b = b.swapaxes(-1, -3).swapaxes(-1, -2)
    if mode == "outgoing":
        u = T.matmul(a, b.swapaxes(-1, -2))  # sum_k a[i, k] b[j, k]
    else:
        u = T.matmul(a.swapaxes(-1, -2), b)  # sum_k a[k, i] b[k, j]
    u = u.swapaxes(-1, -2).swapaxes(-1, -3)
    g = T.sigmoid(dense(params["gate"], z))
    return P + g * dense(params["out"], norm(params["ln_out"], u))


def _starting_node_update(P, params, heads):
    z = norm(params["ln"], P)
    bias = expand_bias(pair_bias(params["pair"]["w"], z, heads), P.shape[-3])
    return attention(params["att"], z, heads, bias=bias)


def triangle_attention(P, mode, params, heads):
    """Gated triangular self-attention around the starting or ending node.

    Starting: row ``i`` attends ``z[i, j] -> z[i, k]`` with bias ``z[j, k]``.
    Ending: the column analog, computed on the transposed pair map.
    """
    if mode == "starting":
        return P + _starting_node_update(P, params, heads)
    if mode == "ending":
        Pt = P.swapaxes(-3, -2)
        return P + _starting_node_update(Pt, params, heads).swapaxes(-3, -2)
    raise ValueError(f"unknown triangle attention mode {mode!r}")


# -- blocks -----------------------------------------------------------------


def stevo_block(S, P, params, heads, rate=0.0, rng=None):
    """One block: ``(S, P) -> (S^e, P^e)``."""
    S = rsa(S, P, params["rsa"], heads, rate, rng)
    S = csa(S, params["csa"], heads, rate, rng)
    Se = S + transition(params["seq_ffn"], S, rate, rng)

    P = opm_update(Se, P, params["opm"])
    P = triangle_update(P, "outgoing", params["tri_out"])
    P = triangle_update(P, "incoming", params["tri_in"])
    P = triangle_attention(P, "starting", params["tri_start"], heads)
    P = triangle_attention(P, "ending", params["tri_end"], heads)
    Pe = P + transition(params["pair_ffn"], P, rate, rng)
    return Se, Pe


def ste_stack(S, P, blocks, heads, rate=0.0, rng=None):
    """Thread ``(S, P)`` through each block's parameters in order."""
    if len(blocks) < 1:
        raise ValueError("at least one block is required")
    for params in blocks:
        S, P = stevo_block(S, P, params, heads, rate, rng)
    return S, P
