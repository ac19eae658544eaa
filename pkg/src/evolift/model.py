"""Model configuration, parameter initialisation and the end-to-end forward pass."""

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .refine import init_rr_round, recursive_refine
from .spr import build_joint_map, init_spr_params, structural_features
from .stevo import embed_sequence, init_embedding, init_stevo_block, ste_stack
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_joints: int = 17
    max_frames: int = 243
    d_s: int = 32
    d_p: int = 16
    d_o: int = 16
    heads: int = 2
    blocks: int = 2
    loops: int = 2
    dropout: float = 0.0
    share_rr_weights: bool = True
    output_scale_mm: float = 1000.0

    def __post_init__(self):
        for name in ("n_joints", "max_frames", "d_s", "d_p", "d_o", "heads", "blocks", "loops"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_s % self.heads or self.d_p % self.heads:
            raise ConfigError(f"d_s={self.d_s} and d_p={self.d_p} must be divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


# Widths used by the default full-size run and by the small test/desk runs.
FULL_PROFILE = ModelConfig(d_s=256, d_p=128, d_o=32, heads=8, blocks=4)
DESK_PROFILE = ModelConfig()


def init_model(config, rng):
    """Fresh parameter tree; ``rng`` is a numpy ``Generator`` or an int seed."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    c = config
    params = {
        "spr": init_spr_params(rng, c.n_joints, c.d_p),
        "embed": init_embedding(rng, c.n_joints, c.d_s, c.max_frames),
        "ste": {str(b): init_stevo_block(rng, c.d_s, c.d_p, c.d_o, c.heads) for b in range(c.blocks)},
    }
    if c.share_rr_weights:
        params["rr"] = init_rr_round(rng, c.d_s, c.d_p, c.heads)
    else:
        params["rr"] = {str(t): init_rr_round(rng, c.d_s, c.d_p, c.heads) for t in range(c.loops)}
    return params


def _ordered(tree):
    return [tree[k] for k in sorted(tree, key=int)]


def evopose_forward(pose2d, params, config, joint_map, use_spr=True, use_recursion=True, rng=None,
                    return_rounds=False):
    """Normalised 2D sequences ``(..., N, J, 2)`` -> root-relative 3D millimetres ``(..., N, J, 3)``.

    ``use_spr=False`` replaces the structural features with zeros;
    ``use_recursion=False`` runs a single round without the pose MLP.
    ``rng`` enables dropout when the configured rate is positive.
    """
    x = pose2d if isinstance(pose2d, Tensor) else Tensor(pose2d)
    *lead, N, J, _ = x.shape
    if J != config.n_joints or joint_map.shape[0] != J:
        raise ShapeError(f"input has {J} joints, model expects {config.n_joints}")
    if N % 2 != 1:
        raise ContractError(f"frame count must be odd, got {N}")

    S = embed_sequence(x, params["embed"])
    if use_spr:
        P = structural_features(joint_map, params["spr"])
    else:
        P = Tensor(np.zeros((J, J, config.d_p)))
    if lead:
        P = T.broadcast_to(P, (*lead, J, J, config.d_p))

    rate = config.dropout if rng is not None else 0.0
    Se, Pe = ste_stack(S, P, _ordered(params["ste"]), config.heads, rate, rng)

    rr = params["rr"] if config.share_rr_weights else _ordered(params["rr"])
    loops = config.loops if use_recursion else 1
    X, rounds = recursive_refine(Se, Pe, rr, config.heads, loops, config.output_scale_mm, use_mlp=use_recursion)
    return (X, rounds) if return_rounds else X
