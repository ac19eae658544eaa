"""The joint map and the pair features built from it.

Run: python demos/structural_priors.py
"""
import numpy as np

from evolift.kinematics import h36m17_skeleton
from evolift.spr import build_joint_map, init_spr_params, structural_features

skel = h36m17_skeleton()
M = build_joint_map(skel)
np.set_printoptions(linewidth=120)
print("tree adjacency (1 = bone between the joints):")
print(M[..., 0].astype(int))

params = init_spr_params(np.random.default_rng(0), skel.n_joints, d_p=8)
P = structural_features(M, params)
print("pair features:", P.shape)

# non-adjacent pairs with the same index gap share a feature vector
same_gap = P.data[5, 2], P.data[9, 6]
print("M[5,2], M[9,6]:", M[5, 2, 0], M[9, 6, 0])
print("equal features for equal gap and adjacency:", np.array_equal(*same_gap))
