"""Training, sliding-window evaluation and inference."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import ConfigError
from .kinematics import DEFAULT_CAMERA, chain_skeleton, flip_horizontal, h36m17_skeleton, normalize_screen, read_dataset
from .layers import flatten, unflatten
from .model import init_model, evopose_forward
from .objectives import EvalReport, compute_losses, joint_errors
from .optim import AMSGradState, amsgrad_step, lr_schedule
from .refine import center_frame
from .spr import build_joint_map
from .tensor import Tensor

log = logging.getLogger(__name__)


def make_skeleton(name, n_joints=None):
    if name == "h36m17":
        return h36m17_skeleton()
    if name.startswith("chain"):
        return chain_skeleton(int(name[5:] or n_joints))
    raise ConfigError(f"unknown skeleton layout {name!r}")


def worker_count():
    try:
        return max(1, int(os.environ.get("EVOLIFT_THREADS", "1")))
    except ValueError:
        return 1


def model_input(record):
    return normalize_screen(record.pose2d, record.camera or DEFAULT_CAMERA)


def params_to_arrays(params):
    return {k: t.data for k, t in flatten(params).items()}


def params_from_arrays(arrays):
    return unflatten({k: Tensor(v) for k, v in arrays.items()})


def _check_data(config, records, skeleton, what):
    for i, rec in enumerate(records):
        if rec.n_joints != skeleton.n_joints:
            raise ConfigError(f"{what} record {i} has {rec.n_joints} joints, skeleton has {skeleton.n_joints}")
        if what == "train" and rec.n_frames < config.n_frames:
            raise ConfigError(f"train record {i} has {rec.n_frames} frames, window needs {config.n_frames}")


def _load(path):
    return read_dataset(path) if path else []


def train(config, records=None, eval_records=None, resume=None, on_epoch=None):
    """Optimise a model; returns ``(checkpoint, metrics_log)``.

    ``records``/``eval_records`` default to the config's dataset paths. Each
    log entry holds the epoch's learning rate, mean training loss, mean
    training MPJPE of the (possibly flipped) batches, and the held-out
    evaluation metrics when an eval split is present.
    """
    records = _load(config.train_path) if records is None else list(records)
    eval_records = _load(config.eval_path) if eval_records is None else list(eval_records)
    if not records:
        raise ConfigError("no training records")
    skeleton = make_skeleton(config.skeleton, records[0].n_joints)
    _check_data(config, records, skeleton, "train")
    _check_data(config, eval_records, skeleton, "eval")

    model_cfg = config.model_config(skeleton.n_joints)
    joint_map = build_joint_map(skeleton)
    weights = config.loss_weights()
    rng = np.random.default_rng(config.seed)
    if resume is None:
        params = init_model(model_cfg, rng)
        opt = AMSGradState()
        start = 0
    else:
        params = params_from_arrays(resume.params)
        opt = resume.optimizer
        start = resume.epoch
        rng.bit_generator.state = resume.rng_state
    flat = flatten(params)
    for t in flat.values():
        t.requires_grad = True

    history = []
    ckpt = None
    n = len(records)
    for epoch in range(start, config.epochs):
        lr = lr_schedule(epoch, config.lr0)
        order = rng.permutation(n)
        losses, errs = [], []
        for lo in range(0, n, config.batch_size):
            batch = [records[i] for i in order[lo:lo + config.batch_size]]
            x, y, gt2d, cams, roots = _assemble(batch, config, skeleton, rng)
            drop_rng = rng if config.dropout > 0 else None
            X, rounds = evopose_forward(x, params, model_cfg, joint_map, config.use_spr, config.use_recursion,
                                        rng=drop_rng, return_rounds=True)
            outputs = rounds if config.deep_supervision else [X]
            loss = None
            for out in outputs:
                total, _, _ = compute_losses(out, y, weights, gt2d, cams, roots)
                loss = total if loss is None else loss + total
            if len(outputs) > 1:
                loss = loss * (1.0 / len(outputs))
            loss.backward()
            amsgrad_step({k: t.data for k, t in flat.items()}, {k: t.grad for k, t in flat.items()}, opt, lr)
            for t in flat.values():
                t.grad = None
            losses.append(loss.item())
            errs.append(float(joint_errors(X.data, y).mean()))

        entry = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "train_mpjpe": float(np.mean(errs))}
        if eval_records:
            report = evaluate_params(params, model_cfg, eval_records, skeleton, config.n_frames,
                                     config.use_spr, config.use_recursion)
            entry.update(eval_mpjpe=report.mpjpe_mm, eval_pck=report.pck_percent, eval_auc=report.auc_percent)
        history.append(entry)
        log.info("epoch %d lr %.6g loss %.4f mpjpe %.3f", epoch, lr, entry["train_loss"], entry["train_mpjpe"])

        ckpt = Checkpoint(config.to_dict(), params_to_arrays(params), opt, epoch + 1, rng.bit_generator.state)
        if config.checkpoint_path:
            save_checkpoint(ckpt, config.checkpoint_path)
        if on_epoch is not None:
            on_epoch(entry)

    if ckpt is None:
        ckpt = Checkpoint(config.to_dict(), params_to_arrays(params), opt, start, rng.bit_generator.state)
    return ckpt, history


def _assemble(batch, config, skeleton, rng):
    xs, ys, g2, cams, roots = [], [], [], [], []
    W = config.n_frames
    for rec in batch:
        if config.flip_augment and rng.random() < 0.5:
            rec = flip_horizontal(rec, skeleton)
        lo = int(rng.integers(0, rec.n_frames - W + 1)) if rec.n_frames > W else 0
        sl = slice(lo, lo + W)
        xs.append(model_input(rec)[sl])
        ys.append(rec.pose3d[sl])
        g2.append(rec.pose2d[sl])
        cams.append(rec.camera)
        roots.append(None if rec.root3d is None else rec.root3d[sl])
    have_roots = all(r is not None for r in roots)
    return np.stack(xs), np.stack(ys), np.stack(g2), cams, (np.stack(roots) if have_roots else None)


# -- evaluation -------------------------------------------------------------


def scored_frames(n_total, window, full_sequence=False):
    """Frames that receive a prediction.

    Default protocol: every frame that can be the centre of a window lying
    fully inside the sequence. Sequences shorter than the window, or
    ``full_sequence=True``, score every frame using replication padding.
    """
    r = window // 2
    if full_sequence or n_total < window:
        return np.arange(n_total)
    return np.arange(r, n_total - r)


def window_indices(n_total, window, centers):
    r = window // 2
    offsets = np.arange(-r, r + 1)
    return np.clip(np.asarray(centers)[:, None] + offsets[None, :], 0, n_total - 1)


def predict_record(params, model_cfg, record, joint_map, window, use_spr=True, use_recursion=True,
                   full_sequence=False):
    """Centre-frame predictions ``(len(frames), J, 3)`` and the frame indices they belong to."""
    frames = scored_frames(record.n_frames, window, full_sequence)
    x = model_input(record)[window_indices(record.n_frames, window, frames)]
    with T.no_grad():
        X = evopose_forward(x, params, model_cfg, joint_map, use_spr, use_recursion)
    return center_frame(X.data), frames


def report_from_predictions(predictions, records, frames_list, flags=()):
    """Pool per-joint errors of scored frames into an :class:`EvalReport`."""
    per_seq, pooled = [], []
    for pred, rec, frames in zip(predictions, records, frames_list):
        e = joint_errors(pred, rec.pose3d[frames])
        pooled.append(e.reshape(-1))
        r = EvalReport.from_errors(e)
        per_seq.append({"seed": rec.seed, "frames_scored": int(len(frames)), "mpjpe_mm": r.mpjpe_mm,
                        "pck_percent": r.pck_percent, "auc_percent": r.auc_percent})
    return EvalReport.from_errors(np.concatenate(pooled), per_seq, flags)


def evaluate_params(params, model_cfg, records, skeleton, window, use_spr=True, use_recursion=True,
                    full_sequence=False):
    joint_map = build_joint_map(skeleton)

    def one(rec):
        return predict_record(params, model_cfg, rec, joint_map, window, use_spr, use_recursion, full_sequence)

    threads = worker_count()
    with T.no_grad():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, records))
        else:
            results = [one(rec) for rec in records]
    return report_from_predictions([r[0] for r in results], records, [r[1] for r in results])


def restore(checkpoint, n_joints=None):
    """``(config, model_config, params, skeleton)`` from a checkpoint."""
    config = TrainConfig.from_dict(checkpoint.config)
    skeleton = make_skeleton(config.skeleton, n_joints)
    return config, config.model_config(skeleton.n_joints), params_from_arrays(checkpoint.params), skeleton


def evaluate(checkpoint, records, full_sequence=False):
    """Score a checkpoint on ``records`` with centre-frame sliding-window inference."""
    config, model_cfg, params, skeleton = restore(checkpoint, records[0].n_joints if records else None)
    for rec in records:
        if rec.n_joints != skeleton.n_joints:
            raise ConfigError(f"dataset has {rec.n_joints} joints, checkpoint expects {skeleton.n_joints}")
    return evaluate_params(params, model_cfg, records, skeleton, config.n_frames, config.use_spr,
                           config.use_recursion, full_sequence)


def infer(checkpoint, records):
    """Full-sequence predictions, one ``(N, J, 3)`` array per record."""
    config, model_cfg, params, skeleton = restore(checkpoint, records[0].n_joints if records else None)
    joint_map = build_joint_map(skeleton)
    out = []
    for rec in records:
        if rec.n_joints != skeleton.n_joints:
            raise ConfigError(f"dataset has {rec.n_joints} joints, checkpoint expects {skeleton.n_joints}")
        pred, _ = predict_record(params, model_cfg, rec, joint_map, config.n_frames, config.use_spr,
                                 config.use_recursion, full_sequence=True)
        out.append(pred)
    return out
