import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evolift.checkpoint import Checkpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from evolift.config import TrainConfig
from evolift.errors import ConfigError, ContractError, NumericError
from evolift.kinematics import chain_skeleton, generate_dataset, h36m17_skeleton
from evolift.optim import AMSGradState, amsgrad_step, lr_schedule
from evolift.train import (
    evaluate,
    evaluate_params,
    infer,
    report_from_predictions,
    restore,
    scored_frames,
    train,
    window_indices,
)

TINY = dict(n_frames=3, d_s=8, d_p=4, d_o=2, blocks=1, heads=2, loops=2, epochs=2)


@pytest.fixture(scope="module")
def records():
    return generate_dataset(h36m17_skeleton(), 4, 5, seed=50)


# -- optimizer -------------------------------------------------------------------------


def test_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, -2.0])}
    state = AMSGradState()
    amsgrad_step(p, {"w": np.zeros(2)}, state, 0.1)
    assert p["w"].tolist() == [1.0, -2.0] and state.step == 1


def test_first_step_is_minus_lr():
    p = {"x": np.array([0.0])}
    amsgrad_step(p, {"x": np.array([1.0])}, AMSGradState(), 1e-3)
    np.testing.assert_allclose(p["x"], [-1e-3], rtol=1e-7)


def test_matches_closed_form_adam_with_running_max(rng):
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
    grads = rng.normal(size=(6, 3))
    p = {"x": np.zeros(3)}
    state = AMSGradState()
    x, m, v, vhat = np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        amsgrad_step(p, {"x": g}, state, lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        vhat = np.maximum(vhat, v / (1 - b2**t))
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(vhat) + eps)
    np.testing.assert_allclose(p["x"], x, rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_vhat_is_monotone(gs):
    p = {"x": np.zeros(1)}
    state = AMSGradState()
    prev = 0.0
    for g in gs:
        amsgrad_step(p, {"x": np.array([g])}, state, 1e-3)
        assert state.vhat["x"][0] >= prev
        prev = state.vhat["x"][0]


def test_nan_gradient_names_the_parameter():
    with pytest.raises(NumericError, match="ste.0.rsa"):
        amsgrad_step({"ste.0.rsa": np.zeros(2)}, {"ste.0.rsa": np.array([0.0, np.nan])}, AMSGradState(), 0.1)


# -- schedule ----------------------------------------------------------------------------


@pytest.mark.parametrize("epoch,lr", [(0, 0.001), (1, 0.00095), (5, 0.001 * 0.95**5 * 0.5)])
def test_schedule_examples(epoch, lr):
    assert lr_schedule(epoch) == pytest.approx(lr, rel=1e-15)
    if epoch == 5:
        assert lr_schedule(epoch) == pytest.approx(3.8689e-4, rel=1e-4)


def test_schedule_closed_form():
    for e in range(101):
        assert lr_schedule(e, 0.001) == pytest.approx(0.001 * 0.95**e * 0.5 ** (e // 5), rel=1e-14)
    with pytest.raises(ValueError):
        lr_schedule(-1)


# -- config --------------------------------------------------------------------------------


def test_config_toml_round_trip(tmp_path):
    cfg = TrainConfig(n_frames=27, use_spr=False, lambda_p=0.0, train_path='a "quoted" path', seed=9)
    path = tmp_path / "c.toml"
    cfg.write(path)
    assert TrainConfig.read(path) == cfg


def test_overrides_coerce_strings():
    cfg = TrainConfig().with_overrides({"use_spr": "false", "epochs": "3", "lr0": "0.01"})
    assert cfg.use_spr is False and cfg.epochs == 3 and cfg.lr0 == 0.01


@pytest.mark.parametrize("bad", [{"n_frames": 8}, {"lr0": 0.0}, {"loops": 0}, {"d_s": 9}, {"lambda_v": -1.0},
                                 {"use_spr": "maybe"}, {"nope": 1}, {"epochs": 1.5}])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        TrainConfig().with_overrides(bad)


def test_bad_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("epochs = = 3\n")
    with pytest.raises(ConfigError):
        TrainConfig.read(path)


def test_ablation_axes_expressible():
    cells = {(s, r) for s in (True, False) for r in (True, False)}
    assert {(c.use_spr, c.use_recursion) for c in
            (TrainConfig(use_spr=s, use_recursion=r) for s, r in cells)} == cells


# -- checkpoint ----------------------------------------------------------------------------


def make_checkpoint(rng):
    opt = AMSGradState(step=7, m={"a.b": rng.normal(size=(2, 3))}, v={"a.b": rng.random((2, 3))},
                       vhat={"a.b": rng.random((2, 3))})
    return Checkpoint({"epochs": 3, "use_spr": True}, {"a.b": rng.normal(size=(2, 3)), "c": np.array(1.5)}, opt,
                      epoch=3, rng_state=np.random.default_rng(4).bit_generator.state)


def test_checkpoint_save_load_save_is_byte_identical(tmp_path, rng):
    path1, path2 = tmp_path / "a.evol", tmp_path / "b.evol"
    save_checkpoint(make_checkpoint(rng), path1)
    save_checkpoint(load_checkpoint(path1), path2)
    assert path1.read_bytes() == path2.read_bytes()
    assert path1.read_bytes()[:4] == b"EVOL"


def test_checkpoint_fields_survive(rng):
    ck = make_checkpoint(rng)
    back = from_bytes(to_bytes(ck))
    assert back.config == ck.config and back.epoch == 3 and back.rng_state == ck.rng_state
    assert back.optimizer.step == 7
    for name in ("m", "v", "vhat"):
        assert np.array_equal(getattr(back.optimizer, name)["a.b"], getattr(ck.optimizer, name)["a.b"])
    assert back.params["c"].shape == () and back.params["c"] == 1.5


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:4] + b"\x09" + b[5:], lambda b: b + b"\0"])
def test_checkpoint_rejects_corruption(rng, mutate):
    with pytest.raises(ContractError):
        from_bytes(mutate(to_bytes(make_checkpoint(rng))))


# -- training ------------------------------------------------------------------------------


def test_training_is_deterministic(records):
    cfg = TrainConfig(**TINY)
    a, ha = train(cfg, records)
    b, hb = train(cfg, records)
    assert ha == hb
    assert to_bytes(a) == to_bytes(b)


def test_seed_changes_the_run(records):
    _, ha = train(TrainConfig(**TINY), records)
    _, hb = train(TrainConfig(**TINY, seed=1), records)
    assert ha != hb


def test_resume_matches_uninterrupted_run(records):
    full, _ = train(TrainConfig(**TINY), records)
    half, _ = train(TrainConfig(**dict(TINY, epochs=1)), records)
    resumed, _ = train(TrainConfig(**TINY), records, resume=from_bytes(to_bytes(half)))
    assert to_bytes(resumed) == to_bytes(full)


def test_checkpoint_written_every_epoch(records, tmp_path):
    path = tmp_path / "run.evol"
    epochs = []
    train(TrainConfig(**TINY, checkpoint_path=str(path)), records,
          on_epoch=lambda e: epochs.append(load_checkpoint(path).epoch))
    assert epochs == [1, 2]


def test_log_and_eval_use_unflipped_eval_data(records):
    cfg = TrainConfig(**dict(TINY, epochs=1), flip_augment=True)
    ck, hist = train(cfg, records[:2], eval_records=records[2:])
    assert set(hist[0]) >= {"epoch", "lr", "train_loss", "train_mpjpe", "eval_mpjpe", "eval_pck", "eval_auc"}
    assert hist[0]["lr"] == 0.001
    assert evaluate(ck, records[2:]).mpjpe_mm == hist[0]["eval_mpjpe"]


def test_loss_decreases_on_tiny_problem(records):
    _, hist = train(TrainConfig(**dict(TINY, epochs=4), flip_augment=False), records)
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


@pytest.mark.parametrize("extra", [{"deep_supervision": True}, {"dropout": 0.1}, {"batch_size": 3},
                                   {"share_rr_weights": False}, {"coord_mode": "squared"}])
def test_training_options_run(records, extra):
    _, hist = train(TrainConfig(**dict(TINY, epochs=1), **extra), records)
    assert np.isfinite(hist[0]["train_loss"])


def test_dataset_mismatch_aborts_before_training(records):
    chain = generate_dataset(chain_skeleton(5), 1, 5, seed=0)
    with pytest.raises(ConfigError):
        train(TrainConfig(**TINY), records + chain)
    with pytest.raises(ConfigError):
        train(TrainConfig(**dict(TINY, n_frames=7)), records)
    with pytest.raises(ConfigError):
        train(TrainConfig(**TINY), [])


# -- evaluation protocol ----------------------------------------------------------------------


def test_scored_frames_protocol():
    assert scored_frames(9, 9).tolist() == [4]
    assert scored_frames(9, 9, full_sequence=True).tolist() == list(range(9))
    assert scored_frames(11, 3).tolist() == list(range(1, 10))
    assert scored_frames(3, 9).tolist() == [0, 1, 2]


def test_window_indices_replicate_edges():
    assert window_indices(4, 5, [0, 3]).tolist() == [[0, 0, 0, 1, 2], [1, 2, 3, 3, 3]]


def test_ground_truth_as_prediction_is_perfect(records):
    frames = [scored_frames(r.n_frames, 3) for r in records]
    report = report_from_predictions([r.pose3d[f] for r, f in zip(records, frames)], records, frames)
    assert (report.mpjpe_mm, report.pck_percent, report.auc_percent) == (0.0, 100.0, 100.0)
    assert len(report.per_sequence) == len(records)


def test_evaluate_rejects_joint_mismatch(records):
    ck, _ = train(TrainConfig(**dict(TINY, epochs=0)), records)
    with pytest.raises(ConfigError):
        evaluate(ck, generate_dataset(chain_skeleton(5), 1, 5, seed=0))


def test_threads_do_not_change_results(records, monkeypatch):
    ck, _ = train(TrainConfig(**dict(TINY, epochs=1)), records)
    config, model_cfg, params, skeleton = restore(ck)
    one = evaluate_params(params, model_cfg, records, skeleton, config.n_frames)
    monkeypatch.setenv("EVOLIFT_THREADS", "3")
    many = evaluate_params(params, model_cfg, records, skeleton, config.n_frames)
    assert one == many


def test_infer_returns_every_frame(records):
    ck, _ = train(TrainConfig(**dict(TINY, epochs=1)), records)
    preds = infer(ck, records)
    assert [p.shape for p in preds] == [(5, 17, 3)] * len(records)


def test_restore_rebuilds_the_model(records):
    ck, _ = train(TrainConfig(**dict(TINY, epochs=1)), records)
    config, model_cfg, params, skeleton = restore(ck)
    assert dataclasses.asdict(config) == ck.config
    assert model_cfg.d_s == 8 and skeleton.n_joints == 17
