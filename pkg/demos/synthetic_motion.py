"""Generate synthetic skeletal motion, check it, and look at a flipped copy.

Run: python demos/synthetic_motion.py
"""
import numpy as np

from evolift.kinematics import flip_horizontal, generate_dataset, h36m17_skeleton

skel = h36m17_skeleton()
records = generate_dataset(skel, count=8, n_frames=27, seed=0)
rec = records[0]
print(f"{len(records)} clips, {rec.n_frames} frames x {rec.n_joints} joints")

# bones keep their length in every frame
lengths = skel.bone_lengths_of(rec.pose3d)[:, 1:]
print("max bone-length drift (mm):", np.abs(lengths - skel.bone_length_mm[1:]).max())

# the root is the origin of every 3D frame
print("root rows all zero:", bool(np.all(rec.pose3d[:, 0] == 0)))

# flipping twice gives the same clip back
back = flip_horizontal(flip_horizontal(rec, skel), skel)
print("flip twice == original (3D):", np.array_equal(back.pose3d, rec.pose3d))

speed = np.linalg.norm(np.diff(rec.pose3d, axis=0), axis=-1).mean()
print(f"mean joint speed: {speed:.1f} mm/frame")
