"""Finite-difference audits of every model block at small shapes."""

import time
from dataclasses import dataclass

import numpy as np

from . import stevo
from .errors import ConfigError
from .kinematics import chain_skeleton
from .layers import flatten
from .model import ModelConfig, evopose_forward, init_model
from .refine import feat_re, reg_head
from .spr import build_joint_map
from .tensor import Tensor, grad_check


@dataclass(frozen=True)
class Profile:
    n_frames: int
    n_joints: int
    d_s: int
    d_p: int
    d_o: int
    heads: int
    blocks: int
    loops: int


PROFILES = {
    "tiny": Profile(3, 3, 4, 4, 2, 2, 1, 2),
    "small": Profile(5, 5, 8, 4, 2, 2, 2, 2),
}

BLOCKS = ("rsa", "csa", "opm_update", "triangle_outgoing", "triangle_incoming", "triangle_starting",
          "triangle_ending", "feat_re", "reg_head", "evopose_forward")


def _perturb(tree, rng, std):
    # fresh init zeroes every output projection, which would hide most of the graph
    for path, t in flatten(tree).items():
        noise = rng.normal(0.0, std, size=t.shape)
        t.data = 1.0 + noise if path.endswith("ln.g") or path.endswith("ln_out.g") else noise
    return tree


def block_gradient_errors(profile="small", seed=0, eps=1e-4, blocks=BLOCKS):
    """Max relative gradient error per block (inputs and every parameter leaf).

    Parameters are drawn at random rather than from the model initialiser so
    no branch is switched off by a zero projection.
    """
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        profile = PROFILES[profile]
    pr = profile
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(n_joints=pr.n_joints, max_frames=pr.n_frames, d_s=pr.d_s, d_p=pr.d_p, d_o=pr.d_o,
                      heads=pr.heads, blocks=pr.blocks, loops=pr.loops)
    params = _perturb(init_model(cfg, rng), rng, 0.3)
    blk = params["ste"]["0"]
    rr = params["rr"]
    N, J, h = pr.n_frames, pr.n_joints, pr.heads
    S = Tensor(rng.normal(size=(N, J, pr.d_s)))
    P = Tensor(rng.normal(size=(J, J, pr.d_p)))
    X = Tensor(rng.normal(size=(N, J, 3)))
    pose2d = Tensor(rng.uniform(-1.0, 1.0, size=(N, J, 2)))
    joint_map = build_joint_map(chain_skeleton(J))

    cases = {
        "rsa": (lambda: stevo.rsa(S, P, blk["rsa"], h), [S, P], blk["rsa"]),
        "csa": (lambda: stevo.csa(S, blk["csa"], h), [S], blk["csa"]),
        "opm_update": (lambda: stevo.opm_update(S, P, blk["opm"]), [S, P], blk["opm"]),
        "triangle_outgoing": (lambda: stevo.triangle_update(P, "outgoing", blk["tri_out"]), [P], blk["tri_out"]),
        "triangle_incoming": (lambda: stevo.triangle_update(P, "incoming", blk["tri_in"]), [P], blk["tri_in"]),
        "triangle_starting": (lambda: stevo.triangle_attention(P, "starting", blk["tri_start"], h), [P],
                              blk["tri_start"]),
        "triangle_ending": (lambda: stevo.triangle_attention(P, "ending", blk["tri_end"], h), [P], blk["tri_end"]),
        "feat_re": (lambda: feat_re(S, X, P, rr, h), [S, X, P], {k: rr[k] for k in ("rsa", "mlp")}),
        "reg_head": (lambda: reg_head(S, rr["head"]), [S], rr["head"]),
        # output is in millimetres; the probe weights keep the loss O(1)
        "evopose_forward": (lambda: evopose_forward(pose2d, params, cfg, joint_map) * 1e-3, [pose2d], params),
    }
    results = {}
    for name in blocks:
        fn, inputs, tree = cases[name]
        probe = rng.normal(size=fn().shape)
        leaves = inputs + list(flatten(tree).values())
        start = time.perf_counter()
        err = grad_check(lambda *_: (fn() * probe).sum(), leaves, eps=eps)
        results[name] = {"max_rel_error": float(err), "n_values": int(sum(t.size for t in leaves)),
                         "seconds": time.perf_counter() - start}
    return results
