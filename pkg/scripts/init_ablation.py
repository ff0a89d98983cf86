#!/usr/bin/env python3
"""Residual vs Gaussian initialization on the deep generated task.

Trains the same >=10-trainable-layer model under both schemes and writes the
validation curves side by side, the accuracy-vs-depth story in miniature.

Usage: python scripts/init_ablation.py [--steps 5000] [--out runs/ablation]
"""

import argparse
import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from logictree import tasks, train
from logictree.model import build_network


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    Xtr, ytr = tasks.glyph_task(12_000, seed=1)
    Xva, yva = tasks.glyph_task(2_000, seed=2)
    curves = {}
    for init in ("residual", "gaussian"):
        spec = tasks.deep_glyph_spec()
        net = build_network(spec, seed=args.seed, init=init)
        cfg = train.TrainConfig(steps=args.steps, batch_size=64,
                                learning_rate=0.05, eval_interval=250,
                                seed=0, init=init)
        res = train.fit(net, Xtr, ytr, cfg, val_planes=Xva, val_labels=yva,
                        verbose=True)
        curves[init] = [(r["step"], r["val_acc_hard"]) for r in res.metrics.rows]
        print(f"{init}: best {res.best_val_hard:.4f}")

    path = os.path.join(args.out, "init_ablation.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "residual_val_acc", "gaussian_val_acc"])
        for (s, r), (_, g) in zip(curves["residual"], curves["gaussian"]):
            w.writerow([s, r, g])
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
