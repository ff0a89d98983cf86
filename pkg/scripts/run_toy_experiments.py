#!/usr/bin/env python3
"""Train the two generated toy tasks and leave metric curves in runs/.

Usage: python scripts/run_toy_experiments.py [--steps-xor 2000]
       [--steps-patterns 5000] [--out runs/toys]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from logictree import tasks, train
from logictree.model import build_network


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps-xor", type=int, default=2000)
    ap.add_argument("--steps-patterns", type=int, default=5000)
    ap.add_argument("--out", default="runs/toys")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    X, y = tasks.xor_task()
    net = build_network(tasks.xor_spec(), seed=args.seed, init="gaussian")
    cfg = train.TrainConfig(steps=args.steps_xor, batch_size=4,
                            learning_rate=0.05, eval_interval=100,
                            seed=args.seed, init="gaussian")
    res = train.fit(net, X, y, cfg, val_planes=X, val_labels=y,
                    metrics_path=os.path.join(args.out, "xor_metrics.csv"))
    print(f"xor: best hard accuracy {res.best_val_hard:.4f} at step {res.best_step}")

    Xtr, ytr = tasks.pattern_task(16_000, seed=args.seed)
    Xva, yva = tasks.pattern_task(2_000, seed=args.seed + 1)
    net = build_network(tasks.pattern_spec(), seed=3, init="residual")
    cfg = train.TrainConfig(steps=args.steps_patterns, batch_size=64,
                            learning_rate=0.05, eval_interval=500,
                            seed=0, init="residual")
    res = train.fit(net, Xtr, ytr, cfg, val_planes=Xva, val_labels=yva,
                    metrics_path=os.path.join(args.out, "patterns_metrics.csv"),
                    log_blocks=True, verbose=True)
    print(f"patterns: best hard accuracy {res.best_val_hard:.4f} at step {res.best_step}")


if __name__ == "__main__":
    main()
