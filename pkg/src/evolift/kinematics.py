"""Skeletons, forward kinematics, pinhole projection and synthetic motion.

Coordinates are camera-space millimetres with x right, y down and z along
the optical axis, so an upright body has its head at negative y.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ContractError, DatasetParseError, DegenerateDepthError, ValidationError


@dataclass(frozen=True)
class Skeleton:
    """A rooted kinematic tree.

    Joints are ordered so that every parent precedes its children; joint 0
    is the root. ``rest_directions`` holds the unit offset of each joint from
    its parent in the rest pose (row 0 is unused).
    """

    parents: tuple
    left_right_pairs: tuple
    bone_length_mm: np.ndarray
    rest_directions: np.ndarray
    joint_names: tuple = ()

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parents)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "left_right_pairs", tuple((int(a), int(b)) for a, b in self.left_right_pairs))
        object.__setattr__(self, "bone_length_mm", np.asarray(self.bone_length_mm, dtype=np.float64))
        object.__setattr__(self, "rest_directions", np.asarray(self.rest_directions, dtype=np.float64))
        self.validate()

    @property
    def n_joints(self):
        return len(self.parents)

    def validate(self):
        J = self.n_joints
        if J < 1 or self.parents[0] != -1:
            raise ValidationError("joint 0 must be the unique root (parent -1)")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise ValidationError(f"joint {j} has parent {self.parents[j]}; parents must precede children")
        if self.bone_length_mm.shape != (J,):
            raise ValidationError(f"bone_length_mm must have shape ({J},)")
        if J > 1 and np.any(self.bone_length_mm[1:] <= 0):
            raise ValidationError("non-root bone lengths must be positive")
        if self.rest_directions.shape != (J, 3):
            raise ValidationError(f"rest_directions must have shape ({J}, 3)")
        if J > 1 and not np.allclose(np.linalg.norm(self.rest_directions[1:], axis=1), 1.0):
            raise ValidationError("rest directions must be unit vectors")
        seen = set()
        for a, b in self.left_right_pairs:
            if a == b or not (0 <= a < J and 0 <= b < J) or a in seen or b in seen:
                raise ValidationError(f"invalid left/right pair ({a}, {b})")
            seen.update((a, b))

    def flip_permutation(self):
        perm = np.arange(self.n_joints)
        for a, b in self.left_right_pairs:
            perm[a], perm[b] = b, a
        return perm

    def children(self):
        kids = [[] for _ in range(self.n_joints)]
        for j, p in enumerate(self.parents[1:], start=1):
            kids[p].append(j)
        return kids

    def bone_lengths_of(self, pose3d):
        """Parent-to-child segment lengths of ``pose3d`` (``(..., J, 3)``), root entry 0."""
        pose3d = np.asarray(pose3d)
        parent = np.array([0] + list(self.parents[1:]))
        return np.linalg.norm(pose3d - pose3d[..., parent, :], axis=-1)


H36M17_NAMES = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)


def h36m17_skeleton():
    """The 17-joint Human3.6M layout with a ~1700mm-tall template."""
    up, down, left, right = (0, -1, 0), (0, 1, 0), (1, 0, 0), (-1, 0, 0)
    rest = np.array([
        (0, 0, 0),
        right, down, down,
        left, down, down,
        up, up, up, up,
        left, down, down,
        right, down, down,
    ], dtype=np.float64)
    lengths = np.array([
        0.0,
        130.0, 460.0, 450.0,
        130.0, 460.0, 450.0,
        240.0, 250.0, 110.0, 120.0,
        160.0, 280.0, 250.0,
        160.0, 280.0, 250.0,
    ])
    return Skeleton(
        parents=(-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15),
        left_right_pairs=((4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)),
        bone_length_mm=lengths,
        rest_directions=rest,
        joint_names=H36M17_NAMES,
    )


def chain_skeleton(n_joints, bone_mm=100.0):
    """A straight chain hanging along +y; handy for small tests."""
    rest = np.zeros((n_joints, 3))
    rest[1:, 1] = 1.0
    lengths = np.full(n_joints, bone_mm)
    lengths[0] = 0.0
    return Skeleton(tuple(range(-1, n_joints - 1)), (), lengths, rest)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


DEFAULT_CAMERA = Camera(1000.0, 1000.0, 500.0, 500.0)


def forward_kinematics(skeleton, joint_rotations, root_pos):
    """Joint positions from local rotations.

    ``joint_rotations`` is ``(..., J, 3, 3)``; row 0 is the global root
    orientation. Joint ``j`` sits at its parent's position plus the parent's
    accumulated global rotation applied to ``bone_length_mm[j] * rest_dir[j]``.
    """
    R = np.asarray(joint_rotations, dtype=np.float64)
    root_pos = np.asarray(root_pos, dtype=np.float64)
    J = skeleton.n_joints
    if R.shape[-3:] != (J, 3, 3):
        raise ValidationError(f"expected rotations of shape (..., {J}, 3, 3), got {R.shape}")
    gram = np.einsum("...ji,...jk->...ik", R, R)
    if np.abs(gram - np.eye(3)).max() > 1e-9 or np.any(np.linalg.det(R) <= 0):
        raise ValidationError("joint rotations must be proper orthonormal matrices")

    lead = R.shape[:-3]
    pos = np.zeros(lead + (J, 3))
    glob = np.zeros(lead + (J, 3, 3))
    pos[..., 0, :] = root_pos
    glob[..., 0, :, :] = R[..., 0, :, :]
    offsets = skeleton.bone_length_mm[:, None] * skeleton.rest_directions
    for j in range(1, J):
        p = skeleton.parents[j]
        pos[..., j, :] = pos[..., p, :] + glob[..., p, :, :] @ offsets[j]
        glob[..., j, :, :] = glob[..., p, :, :] @ R[..., j, :, :]
    return pos


def project(pose3d, camera):
    """Pinhole projection of camera-space points ``(..., 3)`` to pixels ``(..., 2)``."""
    pose3d = np.asarray(pose3d, dtype=np.float64)
    z = pose3d[..., 2]
    if np.any(z <= 1.0):
        raise DegenerateDepthError(f"depth must exceed 1mm (min {z.min():.6g})")
    u = camera.fx * pose3d[..., 0] / z + camera.cx
    v = camera.fy * pose3d[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


def back_project(pose2d, depth, camera):
    pose2d = np.asarray(pose2d, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (pose2d[..., 0] - camera.cx) * depth / camera.fx
    y = (pose2d[..., 1] - camera.cy) * depth / camera.fy
    return np.stack([x, y, depth], axis=-1)


def normalize_screen(pose2d, camera):
    """Map pixels to [-1, 1] over an image of size ``2cx x 2cy``."""
    pose2d = np.asarray(pose2d, dtype=np.float64)
    return np.stack([pose2d[..., 0] / camera.cx - 1.0, pose2d[..., 1] / camera.cy - 1.0], axis=-1)


@dataclass
class SequenceRecord:
    """One labelled clip: 2D pixels, root-relative 3D millimetres and the camera."""

    pose2d: np.ndarray
    pose3d: np.ndarray
    camera: Camera = None
    seed: int = 0
    root3d: np.ndarray = None

    def __post_init__(self):
        self.pose2d = np.asarray(self.pose2d, dtype=np.float64)
        self.pose3d = np.asarray(self.pose3d, dtype=np.float64)
        if self.root3d is not None:
            self.root3d = np.asarray(self.root3d, dtype=np.float64)
        N, J = self.pose3d.shape[:2]
        if self.pose3d.shape != (N, J, 3) or self.pose2d.shape != (N, J, 2):
            raise ValidationError(f"pose shapes {self.pose2d.shape}/{self.pose3d.shape} are inconsistent")
        if N % 2 != 1:
            raise ContractError(f"sequence length must be odd, got {N}")
        if self.root3d is not None and self.root3d.shape != (N, 3):
            raise ValidationError(f"root3d must have shape ({N}, 3)")

    @property
    def n_frames(self):
        return self.pose3d.shape[0]

    @property
    def n_joints(self):
        return self.pose3d.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SequenceRecord):
            return NotImplemented
        same_root = (self.root3d is None and other.root3d is None) or (
            self.root3d is not None and other.root3d is not None and np.array_equal(self.root3d, other.root3d)
        )
        return (
            np.array_equal(self.pose2d, other.pose2d)
            and np.array_equal(self.pose3d, other.pose3d)
            and self.camera == other.camera
            and self.seed == other.seed
            and same_root
        )


@dataclass
class MotionParams:
    """Knobs of the sinusoidal motion synthesiser.

    ``amplitude`` scales every angle trajectory and the root sway; 0 gives a
    static pose.
    """

    amplitude: float = 1.0
    n_harmonics: int = 3
    freq_range_hz: tuple = (0.2, 1.5)
    fps: float = 50.0
    depth_range_mm: tuple = (4000.0, 6000.0)
    lateral_range_mm: float = 400.0
    yaw_range_rad: float = np.pi / 6
    root_sway_mm: float = 80.0
    default_limit_rad: float = 0.3
    joint_limits: dict = field(default_factory=dict)
    camera: Camera = DEFAULT_CAMERA


# Per-joint (x, y, z) Euler amplitude bounds in radians for the 17-joint layout.
H36M17_LIMITS = {
    0: (0.10, 0.25, 0.10),
    1: (0.70, 0.25, 0.30), 4: (0.70, 0.25, 0.30),
    2: (0.80, 0.00, 0.05), 5: (0.80, 0.00, 0.05),
    7: (0.25, 0.25, 0.15), 8: (0.15, 0.20, 0.15), 9: (0.30, 0.40, 0.20),
    11: (0.20, 0.10, 0.20), 14: (0.20, 0.10, 0.20),
    12: (0.90, 0.40, 0.60), 15: (0.90, 0.40, 0.60),
    13: (0.60, 0.30, 0.30), 16: (0.60, 0.30, 0.30),
}


def _angle_tracks(rng, n_frames, n_tracks, params):
    """``(n_frames, n_tracks)`` smooth signals bounded by 1 in magnitude."""
    K = params.n_harmonics
    freqs = rng.uniform(*params.freq_range_hz, size=(n_tracks, K))
    phases = rng.uniform(0.0, 2 * np.pi, size=(n_tracks, K))
    weights = rng.dirichlet(np.ones(K), size=n_tracks)
    t = np.arange(n_frames) / params.fps
    waves = np.sin(2 * np.pi * freqs[None] * t[:, None, None] + phases[None])
    return (weights[None] * waves).sum(axis=-1)


def generate_sequence(skeleton, n_frames, seed, motion_params=None):
    """Synthesise one clip; deterministic in ``seed``."""
    if n_frames < 1 or n_frames % 2 != 1:
        raise ContractError(f"n_frames must be odd and >= 1, got {n_frames}")
    params = motion_params or MotionParams()
    rng = np.random.default_rng(seed)
    J = skeleton.n_joints
    limits = dict(H36M17_LIMITS) if not params.joint_limits and J == 17 else dict(params.joint_limits)
    has_children = [bool(c) for c in skeleton.children()]
    bound = np.zeros((J, 3))
    for j in range(J):
        if j == 0 or has_children[j]:
            bound[j] = limits.get(j, (params.default_limit_rad,) * 3)

    tracks = _angle_tracks(rng, n_frames, J * 3, params).reshape(n_frames, J, 3)
    angles = params.amplitude * bound[None] * tracks
    yaw = rng.uniform(-params.yaw_range_rad, params.yaw_range_rad)
    angles[:, 0, 1] += yaw
    rots = Rotation.from_euler("xyz", angles.reshape(-1, 3)).as_matrix().reshape(n_frames, J, 3, 3)

    depth = rng.uniform(*params.depth_range_mm)
    offset = rng.uniform(-1.0, 1.0, size=2) * np.array([params.lateral_range_mm, params.lateral_range_mm / 2])
    sway = params.amplitude * params.root_sway_mm * _angle_tracks(rng, n_frames, 3, params)
    root = np.array([offset[0], offset[1], depth])[None] + sway

    absolute = forward_kinematics(skeleton, rots, root)
    pose2d = project(absolute, params.camera)
    pose3d = absolute - absolute[:, :1, :]
    return SequenceRecord(pose2d, pose3d, params.camera, int(seed), absolute[:, 0, :].copy())


def generate_dataset(skeleton, count, n_frames, seed, motion_params=None, threads=1):
    """``count`` records with seeds ``seed, seed + 1, ...``.

    Each record depends only on its own seed, so ``threads > 1`` yields the
    same list in the same order.
    """
    def one(i):
        return generate_sequence(skeleton, n_frames, seed + i, motion_params)

    if threads > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(count)))
    return [one(i) for i in range(count)]


def flip_horizontal(record, skeleton):
    """Mirror a record about the camera's vertical plane and swap left/right joints."""
    perm = skeleton.flip_permutation()
    mirror = np.array([-1.0, 1.0, 1.0])
    pose3d = record.pose3d[:, perm, :] * mirror
    pose2d = record.pose2d[:, perm, :].copy()
    cx = record.camera.cx if record.camera is not None else 0.0
    pose2d[..., 0] = 2.0 * cx - pose2d[..., 0]
    root3d = None if record.root3d is None else record.root3d * mirror
    return SequenceRecord(pose2d, pose3d, record.camera, record.seed, root3d)


# -- JSON-lines I/O ---------------------------------------------------------


def record_to_dict(record):
    d = {
        "n_frames": record.n_frames,
        "joints": record.n_joints,
        "pose2d": record.pose2d.tolist(),
        "pose3d": record.pose3d.tolist(),
        "camera": None if record.camera is None else record.camera.to_dict(),
        "seed": record.seed,
    }
    if record.root3d is not None:
        d["root3d"] = record.root3d.tolist()
    return d


def record_from_dict(d):
    N, J = int(d["n_frames"]), int(d["joints"])
    pose2d = np.array(d["pose2d"], dtype=np.float64)
    pose3d = np.array(d["pose3d"], dtype=np.float64)
    if pose2d.shape != (N, J, 2) or pose3d.shape != (N, J, 3):
        raise ValueError(f"declared ({N}, {J}) but got pose2d {pose2d.shape}, pose3d {pose3d.shape}")
    cam = d.get("camera")
    camera = None if cam is None else Camera(float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]))
    root3d = d.get("root3d")
    return SequenceRecord(pose2d, pose3d, camera, int(d["seed"]), None if root3d is None else np.array(root3d))


def write_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec)))
            fh.write("\n")


def read_dataset(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetParseError(line_no, f"{type(exc).__name__}: {exc}") from exc
    return records
