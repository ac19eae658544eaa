"""Recursive refinement head: FeatRe + RegHead unrolled for ``L`` rounds."""

import numpy as np

from . import tensor as T
from .errors import ContractError
from .layers import dense, init_linear
from .stevo import init_row_attention, rsa_update
from .tensor import Tensor


def init_rr_round(rng, d_s, d_p, heads):
    return {
        "rsa": init_row_attention(rng, d_s, d_p, heads),
        "mlp": {
            "fc1": init_linear(rng, 3, d_s),
            "fc2": init_linear(rng, d_s, d_s),
            "fc3": init_linear(rng, d_s, d_s, std=0.0),
        },
        "head": init_linear(rng, d_s, 3, std=0.01),
    }


def pose_mlp(params, X, scale=1.0):
    """Three-layer per-joint MLP ``3 -> d_s -> d_s -> d_s`` on ``X / scale``."""
    h = X * (1.0 / scale) if scale != 1.0 else X
    h = T.gelu(dense(params["fc1"], h))
    h = T.gelu(dense(params["fc2"], h))
    return dense(params["fc3"], h)


def feat_re(Se, X_prev, Pe, params, heads, scale=1.0, use_mlp=True):
    """``rsa(Se, Pe) - mlp(X_prev) + Se``; the attention term carries no residual of its own."""
    r = rsa_update(Se, Pe, params["rsa"], heads)
    if use_mlp:
        r = r - pose_mlp(params["mlp"], X_prev, scale)
    return r + Se


def reg_head(Sr, params, scale=1.0):
    """Per-joint, per-frame ``d_s -> 3`` map (a 1x1 convolution over joints)."""
    X = dense(params, Sr)
    return X * scale if scale != 1.0 else X


def recursive_refine(Se, Pe, rounds, heads, loops, scale=1.0, use_mlp=True):
    """Unroll ``loops`` refinement rounds starting from ``X_0 = 0``.

    ``rounds`` is either one parameter tree (shared across rounds) or a list
    with one tree per round. Returns ``(X_L, [X_1, ..., X_L])``.
    """
    if loops < 1:
        raise ContractError(f"loop count must be >= 1, got {loops}")
    per_round = rounds if isinstance(rounds, (list, tuple)) else [rounds] * loops
    if len(per_round) < loops:
        raise ContractError(f"{len(per_round)} round parameter sets for {loops} loops")
    X = Tensor(np.zeros(Se.shape[:-1] + (3,)))
    S = Se
    history = []
    for t in range(loops):
        p = per_round[t]
        S = feat_re(S, X, Pe, p, heads, scale, use_mlp)
        X = reg_head(S, p["head"], scale)
        history.append(X)
    return X, history


def center_frame(X):
    """Frame ``(N - 1) / 2`` of ``(..., N, J, 3)`` predictions."""
    N = X.shape[-3]
    if N % 2 != 1:
        raise ContractError(f"center frame needs an odd frame count, got {N}")
    return X[..., (N - 1) // 2, :, :]
