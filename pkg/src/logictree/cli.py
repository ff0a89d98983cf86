"""Command-line front end: fetch / train / eval / discretize / synth / bench /
export / diag.

Every artifact-producing command writes a run manifest next to its outputs so
a run can be reproduced from the recorded configuration alone. Exit codes:
0 success, 2 usage error (argparse), 3 missing input file, 4 configuration
conflict, 5 runtime failure (e.g. divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__, bitsim, data, discrete, export, tasks, train
from .model import build_logictreenet, build_network, count_gates

EXIT_OK = 0
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_RUNTIME = 5

GENERATED_DATASETS = ("xor", "patterns")


def _write_manifest(out_dir: str, command: str, resolved: dict, outputs: list):
    manifest = {
        "tool": "logictree",
        "version": __version__,
        "command": command,
        "config": resolved,
        "outputs": outputs,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _resolve(spec_overrides: dict, file_cfg: dict, flag_cfg: dict) -> dict:
    # precedence: flags > config file > built-in defaults
    out = dict(spec_overrides)
    out.update({k: v for k, v in file_cfg.items() if v is not None})
    out.update({k: v for k, v in flag_cfg.items() if v is not None})
    return out


def _load_encoded(dataset: str, split: str, bits: int, root: str | None,
                  limit: int | None = None, thresholds=None):
    raw = data.load_dataset(dataset, split, root)
    if limit:
        raw = raw.subset(np.arange(min(limit, len(raw))))
    enc = data.encode_set(raw, bits, thresholds)
    return enc.planes, enc.labels


def _generated_task(dataset: str, n_train: int, n_val: int, seed: int):
    if dataset == "xor":
        X, y = tasks.xor_task()
        return (X, y), (X, y), tasks.xor_spec()
    X, y = tasks.pattern_task(n_train, seed=seed)
    Xv, yv = tasks.pattern_task(n_val, seed=seed + 1)
    return (X, y), (Xv, yv), tasks.pattern_spec()


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_fetch(args) -> int:
    path = data.fetch(args.dataset, root=args.data_root)
    print(f"fetched {args.dataset} into {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    flag_cfg = {
        "k": args.k, "ox": args.ox, "tau": args.tau,
        "learning_rate": args.lr, "weight_decay": args.wd,
        "batch_size": args.batch_size, "input_bits": args.input_bits,
        "eval_interval": args.eval_interval, "groups": args.groups,
    }
    overrides = _resolve({}, file_cfg, flag_cfg)

    if args.dataset in GENERATED_DATASETS:
        (Xtr, ytr), (Xva, yva), spec = _generated_task(
            args.dataset, args.train_samples, args.val_samples or 2000, args.seed)
        if args.tau:
            import dataclasses

            spec = dataclasses.replace(spec, tau=args.tau)
    else:
        spec = build_logictreenet(args.dataset, args.size, overrides)

    cfg = train.TrainConfig(
        steps=args.steps,
        batch_size=overrides.get("batch_size") or spec.batch_size,
        learning_rate=overrides.get("learning_rate") or spec.learning_rate,
        weight_decay=(overrides.get("weight_decay")
                      if overrides.get("weight_decay") is not None
                      else spec.weight_decay),
        eval_interval=overrides.get("eval_interval") or spec.eval_interval,
        seed=args.seed,
        threads=args.threads,
        init=args.init,
        init_strength=args.strength,
    )
    report = count_gates(spec)
    print(f"model: {spec.dataset}-{spec.size_tag} k={spec.k} "
          f"trainable nodes={report.trainable} hardware gates={report.hardware}")
    print(f"config: tau={spec.tau} lr={cfg.learning_rate} wd={cfg.weight_decay} "
          f"bs={cfg.batch_size} steps={cfg.steps}")

    if args.dataset not in GENERATED_DATASETS:
        planes, labels = _load_encoded(args.dataset, "train", spec.input_bits,
                                       args.data_root, args.limit)
        n_val = args.val_samples or data.DEFAULT_VAL_SIZE[args.dataset]
        n_val = min(n_val, len(labels) - 1)
        enc = data.BinaryEncodedSet(planes, labels, spec.input_bits)
        trn, val = data.split_validation(enc, n_val, seed=args.seed)
        Xtr, ytr = trn.planes, trn.labels
        Xva, yva = val.planes, val.labels

    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else [args.seed])
    os.makedirs(args.out, exist_ok=True)
    results = []
    for seed in seeds:
        run_dir = args.out if len(seeds) == 1 else os.path.join(
            args.out, f"seed{seed}")
        os.makedirs(run_dir, exist_ok=True)
        import dataclasses as _dc

        run_cfg = _dc.replace(cfg, seed=seed)
        net = build_network(spec, seed=seed, init=args.init,
                            strength=args.strength)
        metrics_path = os.path.join(run_dir, "metrics.csv")
        result = train.fit(net, Xtr, ytr, run_cfg, Xva, yva,
                           metrics_path=metrics_path, log_blocks=True,
                           verbose=not args.quiet)
        result.restore_best(net)
        ckpt = os.path.join(run_dir, "model.ckpt")
        train.save_checkpoint(ckpt, net, run_cfg, step=result.best_step)
        _write_manifest(run_dir, "train", {
            "dataset": args.dataset, "size": args.size, "seed": seed,
            "spec": spec.to_manifest(), "train": run_cfg.__dict__,
        }, [ckpt, metrics_path])
        print(f"seed {seed}: best hard validation accuracy "
              f"{result.best_val_hard:.4f} at step {result.best_step}; "
              f"checkpoint {ckpt}")
        results.append((seed, result.best_val_hard, ckpt))
    if len(results) > 1:
        accs = np.array([r[1] for r in results])
        best = max(results, key=lambda r: r[1])
        with open(os.path.join(args.out, "seeds.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seed", "best_val_acc_hard", "checkpoint"])
            w.writerows(results)
        print(f"{len(results)} seeds: mean {accs.mean():.4f} "
              f"+/- {accs.std():.4f}; selected seed {best[0]} ({best[2]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, manifest = train.load_checkpoint(args.ckpt)
    spec = net.spec
    if spec.dataset in GENERATED_DATASETS:
        (Xtr, ytr), (Xva, yva), _ = _generated_task(
            spec.dataset, 4096, 2048, manifest.get("wiring_seed", 0))
        planes, labels = (Xva, yva) if args.split != "train" else (Xtr, ytr)
    else:
        planes, labels = _load_encoded(spec.dataset, args.split, spec.input_bits,
                                       args.data_root)
    soft = train.soft_accuracy(net, planes, labels)
    hard = train.hard_accuracy(net, planes, labels, threads=args.threads)
    print(f"split={args.split} n={len(labels)} "
          f"soft_acc={soft:.4f} hard_acc={hard:.4f} gap={abs(soft - hard):.4f}")
    return EXIT_OK


def cmd_discretize(args) -> int:
    net, _ = train.load_checkpoint(args.ckpt)
    hard = discrete.discretize(net)
    export.emit_netlist_json(hard, args.out)
    _write_manifest(os.path.dirname(args.out) or ".", "discretize",
                    {"ckpt": args.ckpt}, [args.out])
    print(f"wrote {args.out}: {hard.num_nodes} gates, "
          f"{hard.n_inputs} inputs, {hard.classes} classes")
    return EXIT_OK


def cmd_synth(args) -> int:
    net = export.load_netlist_json(args.net)
    listed = discrete.simplify(net)
    export.emit_netlist_json(listed, args.out)
    _write_manifest(os.path.dirname(args.out) or ".", "synth",
                    {"net": args.net}, [args.out])
    s = listed.stats
    print(f"{s['nodes_before']} gates before synthesis")
    print(f"{s['nodes_after']} gates after synthesis "
          f"(depth {s['depth']}, removed {s['nodes_before'] - s['nodes_after']})")
    return EXIT_OK


def cmd_bench(args) -> int:
    net = export.load_netlist_json(args.net)
    rep = bitsim.bench(net, args.samples, threads=args.threads, seed=args.seed,
                       repeats=args.repeats)
    rep = {"net": os.path.basename(args.net), **rep}
    fields = ["net", "gates", "samples", "threads", "seconds", "samples_per_s"]
    print(",".join(fields))
    print(",".join(str(rep[k]) for k in fields))
    if args.out:
        new = not os.path.exists(args.out)
        with open(args.out, "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
            if new:
                w.writeheader()
            w.writerow(rep)
        _write_manifest(os.path.dirname(args.out) or ".", "bench",
                        {"net": args.net, "samples": args.samples,
                         "threads": args.threads}, [args.out])
    return EXIT_OK


def cmd_export(args) -> int:
    net = export.load_netlist_json(args.net)
    if args.format == "verilog":
        text = export.emit_verilog(net, module_name=args.module,
                                   popcount=not args.no_popcount)
    else:
        text = export.emit_netlist_json(net)
    with open(args.out, "w") as f:
        f.write(text)
    _write_manifest(os.path.dirname(args.out) or ".", "export",
                    {"net": args.net, "format": args.format}, [args.out])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_diag(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    if args.ckpt:
        net, _ = train.load_checkpoint(args.ckpt)
        spec = net.spec
        if spec.dataset in GENERATED_DATASETS:
            (X, _), _, _ = _generated_task(spec.dataset, 512, 1, 0)
        else:
            planes, _ = _load_encoded(spec.dataset, "test", spec.input_bits,
                                      args.data_root, limit=512)
            X = planes
        rows = train.activation_stats(net, X[:512])
        act_path = os.path.join(args.out, "activation_density.csv")
        with open(act_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["block", "pre_pool_mean", "post_pool_mean", "no_pool_ref"])
            for i, (pre, post, ref) in enumerate(rows):
                w.writerow([i, pre, post, ref])
        outputs.append(act_path)

        hist = discrete.gate_histogram(net)
        hist_path = os.path.join(args.out, "gate_histogram.csv")
        with open(hist_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["layer"] + [f"gate{i}" for i in range(16)])
            for i, row in enumerate(hist):
                w.writerow([i] + list(map(int, row)))
        outputs.append(hist_path)

    decay_path = os.path.join(args.out, "gradient_decay.csv")
    with open(decay_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["init", "mean_per_layer_ratio"])
        for scheme in ("gaussian", "residual"):
            ratio = train.mean_gradient_decay(
                seeds=range(args.decay_seeds), width=args.decay_width,
                depth=args.decay_depth, init=scheme)
            w.writerow([scheme, ratio])
    outputs.append(decay_path)

    if args.plot:
        _plot_diagnostics(args.out, outputs)
    _write_manifest(args.out, "diag", {"ckpt": args.ckpt}, outputs)
    print("wrote " + ", ".join(outputs))
    return EXIT_OK


def _plot_diagnostics(out_dir: str, csv_paths: list):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for path in csv_paths:
        with open(path) as f:
            rows = list(csv.reader(f))
        if len(rows) < 2:
            continue
        header, body = rows[0], rows[1:]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        xs = range(len(body))
        for col in range(1, len(header)):
            try:
                ys = [float(r[col]) for r in body]
            except ValueError:
                continue
            ax.plot(xs, ys, marker="o", label=header[col])
        ax.set_xlabel(header[0])
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path.replace(".csv", ".svg"))
        plt.close(fig)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="logictree",
        description="Train, discretize, simplify, execute, and export "
                    "convolutional logic gate networks.",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fetch", help="download a dataset into the cache")
    f.add_argument("dataset", choices=["mnist", "cifar10"])
    f.add_argument("--data-root", default=None,
                   help="cache directory (default: $LOGICTREE_DATA)")
    f.set_defaults(fn=cmd_fetch)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--dataset", required=True,
                   choices=["mnist", "cifar10", "xor", "patterns"])
    t.add_argument("--size", default="S", help="published size tag (mnist: S/M/L)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--seeds", default=None,
                   help="comma-separated seeds: train one model per seed, "
                        "report the spread, select the best by validation")
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=10_000)
    t.add_argument("--config", default=None, help="JSON file with overrides")
    t.add_argument("--k", type=int, default=None)
    t.add_argument("--ox", type=int, default=None)
    t.add_argument("--tau", type=float, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--wd", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--input-bits", type=int, default=None)
    t.add_argument("--eval-interval", type=int, default=None)
    t.add_argument("--groups", type=int, default=None)
    t.add_argument("--init", choices=["residual", "gaussian"], default="residual")
    t.add_argument("--strength", type=float, default=5.0,
                   help="logit for the pass-through gate at init")
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--limit", type=int, default=None,
                   help="cap the training set size")
    t.add_argument("--train-samples", type=int, default=8000,
                   help="generated-task training set size")
    t.add_argument("--val-samples", type=int, default=None)
    t.add_argument("--data-root", default=None)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="report soft and hard accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--data-root", default=None)
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("discretize", help="checkpoint -> hard netlist JSON")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_discretize)

    s = sub.add_parser("synth", help="simplify a netlist")
    s.add_argument("--net", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    b = sub.add_parser("bench", help="bit-packed throughput benchmark")
    b.add_argument("--net", required=True)
    b.add_argument("--samples", type=int, default=100_000)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out", default=None, help="append the report to this CSV")
    b.set_defaults(fn=cmd_bench)

    x = sub.add_parser("export", help="emit Verilog or netlist JSON")
    x.add_argument("--net", required=True)
    x.add_argument("--format", choices=["verilog", "json"], default="verilog")
    x.add_argument("--out", required=True)
    x.add_argument("--module", default="logictreenet")
    x.add_argument("--no-popcount", action="store_true",
                   help="emit raw class wire buses instead of score counters")
    x.set_defaults(fn=cmd_export)

    g = sub.add_parser("diag", help="activation, gate-choice, and gradient diagnostics")
    g.add_argument("--ckpt", default=None)
    g.add_argument("--out", default="diag")
    g.add_argument("--decay-width", type=int, default=512)
    g.add_argument("--decay-depth", type=int, default=10)
    g.add_argument("--decay-seeds", type=int, default=10)
    g.add_argument("--plot", action="store_true", help="also write SVG plots")
    g.add_argument("--data-root", default=None)
    g.set_defaults(fn=cmd_diag)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ValueError, KeyError) as e:
        print(f"error: bad configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except train.TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
