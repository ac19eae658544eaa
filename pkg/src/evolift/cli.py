"""Command-line entry point: ``evolift <gen-data|train|eval|infer|grad-check>``.

Successful commands print JSON to stdout. Failures print one JSON object
``{"error": ..., "message": ...}`` on stderr and exit with status 1; argument
errors (including unknown flags) exit with status 2.
"""

import argparse
import json
import sys
from dataclasses import fields

from .checkpoint import load_checkpoint
from .config import TrainConfig
from .gradcheck import BLOCKS, PROFILES, block_gradient_errors
from .kinematics import MotionParams, generate_dataset, read_dataset, write_dataset
from .train import evaluate, infer, make_skeleton, train, worker_count


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_gen_data(args):
    skeleton = make_skeleton(args.skeleton)
    mp = MotionParams() if args.amplitude is None else MotionParams(amplitude=args.amplitude)
    records = generate_dataset(skeleton, args.count, args.frames, args.seed, mp, threads=worker_count())
    write_dataset(records, args.out)
    _emit({"out": args.out, "records": len(records), "frames": args.frames, "joints": skeleton.n_joints})


def cmd_train(args):
    config = TrainConfig.read(args.config) if args.config else TrainConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(TrainConfig) if getattr(args, f.name) is not None}
    config = config.with_overrides(overrides)
    resume = load_checkpoint(args.resume) if args.resume else None
    _, history = train(config, resume=resume, on_epoch=_emit)
    if history:
        _emit({"final": history[-1], "checkpoint": config.checkpoint_path or None})


def cmd_eval(args):
    report = evaluate(load_checkpoint(args.checkpoint), read_dataset(args.data), full_sequence=args.full_sequence)
    if args.out:
        report.write(args.out)
    print(report.to_json())


def cmd_infer(args):
    preds = infer(load_checkpoint(args.checkpoint), read_dataset(args.data))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump([p.tolist() for p in preds], fh)
    _emit({"out": args.out, "records": len(preds)})


def cmd_grad_check(args):
    results = block_gradient_errors(args.profile, args.seed, blocks=args.blocks or BLOCKS)
    worst = float(max(r["max_rel_error"] for r in results.values()))
    _emit({"profile": args.profile, "tolerance": args.tol, "max_rel_error": worst, "passed": bool(worst < args.tol),
           "blocks": results})
    return 0 if worst < args.tol else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="evolift", description="2D-to-3D pose lifting with structural priors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic JSONL dataset")
    p.add_argument("--skeleton", default="h36m17", help="h36m17 or chainN")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=None, help="joint-angle amplitude scale (0 = static)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a TOML config; every config key is also a flag")
    p.add_argument("--config", default=None)
    p.add_argument("--resume", default=None, metavar="CHECKPOINT", help="continue from this checkpoint's epoch")
    for f in fields(TrainConfig):
        kind = {bool: str, int: int, float: float}.get(type(f.default), str)
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None, metavar=f.name.upper())
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--full-sequence", action="store_true", help="score every frame with replication padding")
    p.add_argument("--out", default=None, help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write per-frame 3D predictions as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("grad-check", help="finite-difference audit of every block")
    p.add_argument("--profile", choices=sorted(PROFILES), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--blocks", nargs="*", choices=BLOCKS, default=None)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except Exception as exc:  # every failure leaves one machine-readable line
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
