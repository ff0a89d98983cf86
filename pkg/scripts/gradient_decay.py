#!/usr/bin/env python3
"""Measure per-layer backward gradient-norm decay for both init schemes.

Writes one CSV row per (init, depth) with the mean ratio over seeds.

Usage: python scripts/gradient_decay.py [--width 512] [--depths 6 10 14]
       [--seeds 10] [--out runs/decay.csv]
"""

import argparse
import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from logictree.train import mean_gradient_decay


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--width", type=int, default=512)
    ap.add_argument("--depths", type=int, nargs="+", default=[6, 10, 14])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="runs/decay.csv")
    args = ap.parse_args()
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["init", "depth", "width", "mean_per_layer_ratio"])
        for init in ("gaussian", "residual"):
            for depth in args.depths:
                ratio = mean_gradient_decay(seeds=range(args.seeds),
                                            width=args.width, depth=depth,
                                            init=init)
                w.writerow([init, depth, args.width, f"{ratio:.4f}"])
                print(f"{init:9s} depth {depth:3d}: {ratio:.4f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
