#!/usr/bin/env python3
"""Full MNIST pipeline at reduced width: fetch, train k=4 for 20k steps,
evaluate, discretize, synthesize, benchmark, and export Verilog.

Roughly 1.5 h on one CPU core at the default settings; pass --steps to
shorten. Requires network access for the initial fetch (or pre-populated
$LOGICTREE_DATA).

Usage: python scripts/mnist_reduced.py [--steps 20000] [--out runs/mnist_k4]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from logictree.cli import main as cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--out", default="runs/mnist_k4")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    out = args.out
    os.makedirs(out, exist_ok=True)

    if cli(["fetch", "mnist"]) != 0:
        print("fetch failed; place the IDX files under $LOGICTREE_DATA/mnist "
              "and rerun", file=sys.stderr)
        return 3
    rc = cli([
        "train", "--dataset", "mnist", "--size", "k4", "--out", out,
        "--steps", str(args.steps), "--k", "4", "--ox", "2", "--tau", "3.25",
        "--lr", "0.01", "--wd", "0", "--batch-size", "128", "--input-bits", "1",
        "--eval-interval", "1000", "--seed", "0",
        "--threads", str(args.threads),
    ])
    if rc:
        return rc
    ckpt = os.path.join(out, "model.ckpt")
    raw = os.path.join(out, "mnist_k4.lgn.json")
    synth = os.path.join(out, "mnist_k4.synth.lgn.json")
    for cmd in (
        ["eval", "--ckpt", ckpt, "--split", "test"],
        ["discretize", "--ckpt", ckpt, "--out", raw],
        ["synth", "--net", raw, "--out", synth],
        ["bench", "--net", synth, "--samples", "100000",
         "--threads", str(args.threads),
         "--out", os.path.join(out, "bench.csv")],
        ["export", "--net", synth, "--format", "verilog",
         "--out", os.path.join(out, "mnist_k4.v")],
        ["diag", "--ckpt", ckpt, "--out", os.path.join(out, "diag")],
    ):
        rc = cli(cmd)
        if rc:
            return rc
    print(f"pipeline complete; artifacts in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
