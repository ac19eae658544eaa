"""Structural priors: kinematic-tree adjacency plus joint-index-gap embeddings."""

import numpy as np

from . import tensor as T
from .errors import ContractError
from .layers import init_linear
from .tensor import Tensor


def build_joint_map(skeleton):
    """``(J, J, 1)`` binary adjacency of the tree; the diagonal is 0."""
    J = skeleton.n_joints
    M = np.zeros((J, J, 1))
    for child, parent in enumerate(skeleton.parents):
        if parent >= 0:
            M[child, parent, 0] = M[parent, child, 0] = 1.0
    return M


def gap_index(i, j, n_joints):
    if not (0 <= i < n_joints and 0 <= j < n_joints):
        raise ContractError(f"joint indices ({i}, {j}) out of range for J={n_joints}")
    return (i - j) + (n_joints - 1)


def gap_index_matrix(n_joints):
    idx = np.arange(n_joints)
    return idx[:, None] - idx[None, :] + (n_joints - 1)


def init_spr_params(rng, n_joints, d_p, spe_std=0.02):
    return {
        "spe": Tensor(rng.normal(0.0, spe_std, size=(2 * n_joints - 1, d_p))),
        "map": init_linear(rng, 1, d_p),
    }


def structural_features(joint_map, params):
    """``P[i, j] = map(M[i, j]) + spe[(i - j) + J - 1]``, shape ``(J, J, d_p)``."""
    J = joint_map.shape[0]
    spe = params["spe"]
    if spe.shape[0] != 2 * J - 1:
        raise ContractError(f"gap table has {spe.shape[0]} rows, expected {2 * J - 1}")
    mapped = T.linear(Tensor(joint_map), params["map"]["w"], params["map"].get("b"))
    return mapped + T.getitem(spe, gap_index_matrix(J))
