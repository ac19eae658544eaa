"""Train a small lifter for a few epochs and score it on held-out clips.

Run: python demos/train_and_evaluate.py
"""
from evolift.config import TrainConfig
from evolift.kinematics import generate_dataset, h36m17_skeleton
from evolift.train import evaluate, train

skel = h36m17_skeleton()
train_set = generate_dataset(skel, 16, 9, seed=0)
held_out = generate_dataset(skel, 4, 27, seed=10_000)

cfg = TrainConfig(n_frames=9, epochs=6)
ckpt, history = train(cfg, train_set, eval_records=held_out)
for h in history:
    print(f"epoch {h['epoch']}: lr {h['lr']:.2e}  loss {h['train_loss']:.1f}  "
          f"train {h['train_mpjpe']:.1f}mm  held-out {h['eval_mpjpe']:.1f}mm")

report = evaluate(ckpt, held_out)
print(f"MPJPE {report.mpjpe_mm:.1f}mm  PCK {report.pck_percent:.1f}%  AUC {report.auc_percent:.1f}%")
