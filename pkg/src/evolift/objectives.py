"""Training losses on tensors and evaluation metrics on numpy arrays."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateDepthError, ShapeError
from .tensor import Tensor

AUC_THRESHOLDS = np.arange(5.0, 150.0 + 1e-9, 5.0)


@dataclass(frozen=True)
class LossWeights:
    lambda_v: float = 0.2
    lambda_a: float = 0.2
    lambda_p: float = 0.1
    coord_mode: str = "norm"  # or "squared"

    def __post_init__(self):
        if min(self.lambda_v, self.lambda_a, self.lambda_p) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.coord_mode not in ("norm", "squared"):
            raise ContractError(f"unknown coord_mode {self.coord_mode!r}")


def _target(Y):
    return Y.data if isinstance(Y, Tensor) else np.asarray(Y, dtype=np.float64)


def _check(X, Y):
    if X.shape != Y.shape:
        raise ShapeError(f"prediction shape {X.shape} != target shape {Y.shape}")


def loss_coord(X, Y, squared=False):
    """Mean per-joint Euclidean distance (or squared distance) in millimetres."""
    Y = _target(Y)
    _check(X, Y)
    diff = X - Y
    if squared:
        return (diff * diff).sum(axis=-1).mean()
    return T.norm_lastdim(diff).mean()


def _frame_diff(x, order):
    for _ in range(order):
        x = x[..., 1:, :, :] - x[..., :-1, :, :]
    return x


def _temporal_loss(X, Y, order):
    Y = _target(Y)
    _check(X, Y)
    if X.shape[-3] <= order:
        return Tensor(0.0)
    return T.norm_lastdim(_frame_diff(X, order) - _frame_diff(Y, order)).mean()


def loss_velocity(X, Y):
    """Mean norm of the gap between predicted and true frame-to-frame differences."""
    return _temporal_loss(X, Y, 1)


def loss_acceleration(X, Y):
    return _temporal_loss(X, Y, 2)


def _camera_arrays(cameras, lead):
    if not isinstance(cameras, (list, tuple)):
        cameras = [cameras]
    vals = np.array([[c.fx, c.fy, c.cx, c.cy] for c in cameras], dtype=np.float64)
    return vals.reshape(*lead, 4) if lead else vals.reshape(4)


def loss_reproj(X, gt2d, cameras, root_abs):
    """Mean pixel distance between projected ``X + root`` and ``gt2d``.

    ``X`` is ``(..., N, J, 3)``; ``root_abs`` is ``(..., N, 3)``; ``cameras`` is
    one :class:`Camera` or a list with one per leading batch entry.
    """
    gt2d = np.asarray(gt2d, dtype=np.float64)
    root_abs = np.asarray(root_abs, dtype=np.float64)
    lead = X.shape[:-3]
    cam = _camera_arrays(cameras, lead)[..., None, None, :]
    absolute = X + root_abs[..., None, :]
    z = absolute[..., 2]
    if np.any(z.data <= 1.0):
        raise DegenerateDepthError("reconstructed depth must exceed 1mm")
    u = absolute[..., 0] / z * cam[..., 0] + cam[..., 2]
    v = absolute[..., 1] / z * cam[..., 1] + cam[..., 3]
    uv = T.stack([u, v], axis=-1)
    return T.norm_lastdim(uv - gt2d).mean()


def total_loss(parts, weights=LossWeights()):
    """``L_c + lambda_v L_v + lambda_a L_a + lambda_p L_p``; parts is a dict or a 4-tuple."""
    if not isinstance(parts, dict):
        parts = dict(zip(("coord", "velocity", "acceleration", "reproj"), parts))
    total = parts["coord"]
    for key, lam in (("velocity", weights.lambda_v), ("acceleration", weights.lambda_a), ("reproj", weights.lambda_p)):
        if parts.get(key) is not None and lam != 0.0:
            total = total + parts[key] * lam
    return total


def compute_losses(X, target3d, weights=LossWeights(), gt2d=None, cameras=None, root_abs=None):
    """All loss terms plus the weighted total.

    Returns ``(total, parts, flags)``; ``flags`` lists disabled terms, e.g.
    ``"reproj_skipped"`` when camera or root trajectory is missing.
    """
    flags = []
    parts = {
        "coord": loss_coord(X, target3d, squared=weights.coord_mode == "squared"),
        "velocity": loss_velocity(X, target3d),
        "acceleration": loss_acceleration(X, target3d),
        "reproj": None,
    }
    have_cams = cameras is not None and not (
        isinstance(cameras, (list, tuple)) and any(c is None for c in cameras)
    )
    if gt2d is not None and have_cams and root_abs is not None and weights.lambda_p > 0:
        parts["reproj"] = loss_reproj(X, gt2d, cameras, root_abs)
    else:
        flags.append("reproj_skipped")
    return total_loss(parts, weights), parts, flags


# -- metrics ----------------------------------------------------------------


def joint_errors(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt):
    """Mean per-joint position error over all joints (and frames, if present)."""
    return float(joint_errors(pred, gt).mean())


def _errors(errors_mm):
    e = np.asarray(errors_mm, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ContractError("no errors to score")
    if np.any(e < 0):
        raise ContractError("errors must be non-negative")
    return e


def pck(errors_mm, threshold=150.0):
    """Percentage of errors at or below ``threshold`` millimetres."""
    e = _errors(errors_mm)
    return 100.0 * np.count_nonzero(e <= threshold) / e.size


def auc(errors_mm, thresholds=AUC_THRESHOLDS):
    """Mean PCK over the threshold grid (5, 10, ..., 150 mm by default)."""
    e = _errors(errors_mm)
    return float(np.mean([pck(e, t) for t in thresholds]))


@dataclass
class EvalReport:
    mpjpe_mm: float
    pck_percent: float
    auc_percent: float
    per_sequence: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @classmethod
    def from_errors(cls, errors_mm, per_sequence=(), flags=()):
        e = _errors(errors_mm)
        return cls(float(e.mean()), pck(e), auc(e), list(per_sequence), list(flags))

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
