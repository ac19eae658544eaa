import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evolift import objectives as O
from evolift.errors import ContractError, DegenerateDepthError, ShapeError
from evolift.kinematics import DEFAULT_CAMERA, generate_sequence, h36m17_skeleton, project
from evolift.tensor import Tensor, grad_check


def brute_mean_norm(X, Y):
    total, count = 0.0, 0
    for idx in np.ndindex(X.shape[:-1]):
        total += np.sqrt(sum((X[idx][c] - Y[idx][c]) ** 2 for c in range(3)))
        count += 1
    return total / count


# -- coordinate loss ----------------------------------------------------------------


def test_coord_loss_identical_is_zero(rng):
    X = rng.normal(size=(3, 4, 3))
    assert O.loss_coord(Tensor(X), X).item() == 0.0


def test_coord_loss_pythagoras():
    assert O.loss_coord(Tensor([[[3.0, 4.0, 0.0]]]), np.zeros((1, 1, 3))).item() == 5.0


def test_coord_loss_matches_brute_force(rng):
    X, Y = rng.normal(size=(3, 4, 3)) * 100, rng.normal(size=(3, 4, 3)) * 100
    np.testing.assert_allclose(O.loss_coord(Tensor(X), Y).item(), brute_mean_norm(X, Y), rtol=1e-13)


def test_coord_loss_equals_mpjpe(rng):
    X, Y = rng.normal(size=(5, 17, 3)), rng.normal(size=(5, 17, 3))
    assert O.loss_coord(Tensor(X), Y).item() == O.mpjpe(X, Y)


def test_coord_loss_squared_mode():
    assert O.loss_coord(Tensor([[[3.0, 4.0, 0.0]]]), np.zeros((1, 1, 3)), squared=True).item() == 25.0


def test_coord_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        O.loss_coord(Tensor(np.zeros((2, 3, 3))), np.zeros((3, 3, 3)))


# -- temporal losses -------------------------------------------------------------------


def test_temporal_losses_vanish_for_constant_sequences(rng):
    X = Tensor(np.broadcast_to(rng.normal(size=(1, 4, 3)), (5, 4, 3)).copy())
    Y = np.broadcast_to(rng.normal(size=(1, 4, 3)), (5, 4, 3))
    assert O.loss_velocity(X, Y).item() == 0.0
    assert O.loss_acceleration(X, Y).item() == 0.0


def test_temporal_losses_ignore_constant_offsets(rng):
    Y = rng.normal(size=(6, 4, 3))
    X = Tensor(Y + rng.normal(size=3))
    assert O.loss_velocity(X, Y).item() < 1e-12
    assert O.loss_acceleration(X, Y).item() < 1e-12


def test_linear_motion_three_frames():
    step = np.array([3.0, 0.0, 4.0])
    X = Tensor(np.arange(3)[:, None, None] * step)  # one joint moving 5 mm per frame
    Y = np.zeros((3, 1, 3))
    assert O.loss_velocity(X, Y).item() == 5.0
    assert O.loss_acceleration(X, Y).item() == 0.0


@pytest.mark.parametrize("N", [1, 2])
def test_short_sequences_give_zero(N):
    X = Tensor(np.ones((N, 2, 3)))
    Y = np.zeros((N, 2, 3))
    assert O.loss_acceleration(X, Y).item() == 0.0
    if N == 1:
        assert O.loss_velocity(X, Y).item() == 0.0


def test_velocity_matches_brute_force(rng):
    X, Y = rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3, 3))
    expected = brute_mean_norm(X[1:] - X[:-1], Y[1:] - Y[:-1])
    np.testing.assert_allclose(O.loss_velocity(Tensor(X), Y).item(), expected, rtol=1e-13)
    dX, dY = X[1:] - X[:-1], Y[1:] - Y[:-1]
    expected = brute_mean_norm(dX[1:] - dX[:-1], dY[1:] - dY[:-1])
    np.testing.assert_allclose(O.loss_acceleration(Tensor(X), Y).item(), expected, rtol=1e-13)


# -- reprojection -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def record():
    return generate_sequence(h36m17_skeleton(), 5, seed=21)


def test_reprojection_of_ground_truth_is_zero(record):
    loss = O.loss_reproj(Tensor(record.pose3d), record.pose2d, record.camera, record.root3d)
    assert loss.item() < 1e-9


def test_reprojection_error_shrinks_with_depth(record):
    offset = np.array([50.0, 0.0, 0.0])
    errs = []
    for extra in (0.0, 4000.0):
        root = record.root3d + np.array([0.0, 0.0, extra])
        gt2d = project(record.pose3d + root[:, None], record.camera)
        errs.append(O.loss_reproj(Tensor(record.pose3d + offset), gt2d, record.camera, root).item())
    assert errs[1] < errs[0]


def test_reprojection_rejects_bad_depth(record):
    root = record.root3d * np.array([1.0, 1.0, 0.0])
    with pytest.raises(DegenerateDepthError):
        O.loss_reproj(Tensor(record.pose3d), record.pose2d, record.camera, root)


def test_reprojection_batched_cameras(record):
    X = Tensor(np.stack([record.pose3d, record.pose3d]))
    loss = O.loss_reproj(X, np.stack([record.pose2d] * 2), [record.camera, DEFAULT_CAMERA],
                         np.stack([record.root3d] * 2))
    assert loss.item() < 1e-9


def test_reprojection_gradient(record, rng):
    X = Tensor(record.pose3d + rng.normal(0, 20, size=record.pose3d.shape))
    err = grad_check(lambda x: O.loss_reproj(x, record.pose2d, record.camera, record.root3d), [X], eps=1e-4)
    assert err < 1e-5


def test_missing_camera_skips_reprojection(record):
    X = Tensor(record.pose3d + 1.0)
    total, parts, flags = O.compute_losses(X, record.pose3d, gt2d=record.pose2d, cameras=None,
                                           root_abs=record.root3d)
    assert parts["reproj"] is None and flags == ["reproj_skipped"]
    assert total.item() == pytest.approx(parts["coord"].item())


def test_compute_losses_with_camera(record, rng):
    X = Tensor(record.pose3d + rng.normal(0, 10, size=record.pose3d.shape))
    total, parts, flags = O.compute_losses(X, record.pose3d, gt2d=record.pose2d, cameras=record.camera,
                                           root_abs=record.root3d)
    assert flags == []
    expected = (parts["coord"].item() + 0.2 * parts["velocity"].item() + 0.2 * parts["acceleration"].item()
                + 0.1 * parts["reproj"].item())
    assert total.item() == pytest.approx(expected, rel=1e-14)


# -- total loss ------------------------------------------------------------------------------


def test_total_default_weights():
    w = O.LossWeights()
    assert (w.lambda_v, w.lambda_a, w.lambda_p) == (0.2, 0.2, 0.1)
    assert O.total_loss((Tensor(1.0), Tensor(1.0), Tensor(1.0), Tensor(1.0))).item() == pytest.approx(1.5, abs=1e-15)


def test_total_zero_weights():
    parts = (Tensor(3.0), Tensor(1.0), Tensor(7.0), Tensor(2.0))
    assert O.total_loss(parts, O.LossWeights(0.0, 0.0, 0.0)).item() == 3.0


def test_total_arithmetic():
    parts = (Tensor(2.0), Tensor(1.0), Tensor(1.0), Tensor(2.0))
    assert O.total_loss(parts).item() == pytest.approx(2.6, abs=1e-15)


@given(st.lists(st.floats(0, 1e3), min_size=4, max_size=4), st.floats(0, 1e3))
def test_total_is_linear_in_each_part(parts, delta):
    w = O.LossWeights()
    base = O.total_loss(tuple(Tensor(p) for p in parts), w).item()
    for k, lam in enumerate((1.0, w.lambda_v, w.lambda_a, w.lambda_p)):
        bumped = list(parts)
        bumped[k] += delta
        got = O.total_loss(tuple(Tensor(p) for p in bumped), w).item()
        assert got == pytest.approx(base + lam * delta, rel=1e-12, abs=1e-9)


def test_negative_weights_rejected():
    with pytest.raises(ContractError):
        O.LossWeights(lambda_v=-0.1)
    with pytest.raises(ContractError):
        O.LossWeights(coord_mode="l1")


# -- metrics -----------------------------------------------------------------------------------


def test_mpjpe_examples(rng):
    gt = rng.normal(size=(17, 3))
    assert O.mpjpe(gt, gt) == 0.0
    pred = gt.copy()
    pred[3] += [0.0, 0.0, 10.0]
    assert O.mpjpe(pred, gt) == pytest.approx(10.0 / 17.0, rel=1e-12)


def test_mpjpe_matches_brute_force(rng):
    pred, gt = rng.normal(size=(6, 17, 3)) * 50, rng.normal(size=(6, 17, 3)) * 50
    assert abs(O.mpjpe(pred, gt) - brute_mean_norm(pred, gt)) <= 1e-12 * brute_mean_norm(pred, gt)


def test_pck_examples():
    assert O.pck([100.0, 200.0], 150.0) == 50.0
    assert O.pck(np.zeros(10)) == 100.0 and O.auc(np.zeros(10)) == 100.0
    assert O.pck([150.0] * 4) == 100.0
    assert O.auc([150.0] * 4) == pytest.approx(100.0 / 30.0, rel=1e-12)


def test_auc_grid():
    assert len(O.AUC_THRESHOLDS) == 30
    assert O.AUC_THRESHOLDS[0] == 5.0 and O.AUC_THRESHOLDS[-1] == 150.0


@pytest.mark.parametrize("bad", [[], [-1.0, 2.0]])
def test_metrics_reject_bad_input(bad):
    with pytest.raises(ContractError):
        O.pck(bad)
    with pytest.raises(ContractError):
        O.auc(bad)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 400)))
def test_pck_auc_against_counting_oracle(errors):
    def count(t):
        return 100.0 * sum(1 for e in errors if e <= t) / len(errors)

    assert abs(O.pck(errors) - count(150.0)) <= 1e-12 * 100
    grid = [5.0 * k for k in range(1, 31)]
    expected = sum(count(t) for t in grid) / 30
    assert abs(O.auc(errors) - expected) <= 1e-12 * max(expected, 1.0)
    curve = [O.pck(errors, t) for t in grid]
    assert all(a <= b for a, b in zip(curve, curve[1:]))
    assert min(curve) - 1e-12 <= O.auc(errors) <= max(curve) + 1e-12


# -- report --------------------------------------------------------------------------------------


def test_report_round_trip(tmp_path):
    r = O.EvalReport.from_errors([10.0, 200.0, 50.0], per_sequence=[{"seed": 1, "mpjpe_mm": 3.0}],
                                 flags=["reproj_skipped"])
    path = tmp_path / "r.json"
    r.write(path)
    assert O.EvalReport.read(path) == r
    d = json.loads(path.read_text())
    assert {"mpjpe_mm", "pck_percent", "auc_percent", "per_sequence"} <= set(d)
    assert 0 <= r.pck_percent <= 100 and 0 <= r.auc_percent <= 100
