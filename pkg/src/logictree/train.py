"""Training: loss, AdamW, the fit loop with validation-based selection,
activation/gradient diagnostics, metrics CSV, and checkpoints.

Reported "hard" accuracy always comes from the discretized network run on the
bit-packed engine; the relaxed ("soft") accuracy is what the optimizer sees.
"""

from __future__ import annotations

import copy
import csv
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import bitsim, discrete
from .layers import ConvBlock, RandomLayer, TreeConvLayer
from .model import ModelSpec, Network, build_network

CHECKPOINT_MAGIC = b"LTNC"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 10_000
    batch_size: int = 128
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    eval_interval: int = 1000
    seed: int = 0
    threads: int = 1
    init: str = "residual"
    init_strength: float = 5.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")

    @staticmethod
    def from_spec(spec: ModelSpec, **overrides) -> "TrainConfig":
        base = dict(
            batch_size=spec.batch_size,
            learning_rate=spec.learning_rate,
            weight_decay=spec.weight_decay,
            eval_interval=spec.eval_interval,
        )
        base.update(overrides)
        return TrainConfig(**base)


def softmax_cross_entropy(scores: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient wrt the scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite class scores")
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = scores.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class AdamW:
    """Adam with decoupled weight decay; moments congruent to the params."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p, dtype=np.float64) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1 - b1 ** self.t
        bias2 = 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
            g64 = g.astype(np.float64)
            m *= b1
            m += (1 - b1) * g64
            v *= b2
            v += (1 - b2) * g64 * g64
            if self.weight_decay:
                p -= (self.lr * self.weight_decay * p).astype(p.dtype)
            update = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p -= update.astype(p.dtype)


# ---------------------------------------------------------------------------
# Evaluation helpers


def _iter_batches(n, size):
    for lo in range(0, n, size):
        yield np.arange(lo, min(lo + size, n))


def soft_accuracy(net: Network, planes: np.ndarray, labels: np.ndarray,
                  batch_size: int = 512) -> float:
    dtype = net.params()[0].dtype if net.params() else np.float32
    hits = 0
    for idx in _iter_batches(len(labels), batch_size):
        scores = net.forward(planes[idx].astype(dtype))
        hits += int((scores.argmax(axis=1) == labels[idx]).sum())
    return hits / len(labels)


def hard_accuracy(net: Network, planes: np.ndarray, labels: np.ndarray,
                  threads: int = 1) -> float:
    """Accuracy of the argmax-discretized network on the packed engine."""
    hard = discrete.discretize(net)
    bits = planes.reshape(planes.shape[0], -1)
    scores = bitsim.eval_packed(hard, bitsim.pack_inputs(bits), threads=threads)
    return float((scores.argmax(axis=1) == labels).mean())


def activation_stats(net: Network, planes: np.ndarray) -> list[tuple[float, float, float]]:
    """(pre-pool mean, post-pool mean, 0.5 reference) per conv block."""
    dtype = net.params()[0].dtype if net.params() else np.float32
    stats: list = []
    net.forward(planes.astype(dtype), stats=stats)
    return [(pre, post, 0.5) for pre, post in stats]


# ---------------------------------------------------------------------------
# Batch-parallel gradient evaluation


def _worker_clone(net: Network) -> Network:
    """Shallow copy sharing parameters/wiring but owning its grad buffers."""
    blocks = []
    for b in net.blocks:
        if isinstance(b, ConvBlock):
            tree = copy.copy(b.tree)
            tree.grad_z = np.zeros_like(tree.z)
            nb = ConvBlock(tree)
        else:
            nb = copy.copy(b)
            if isinstance(nb, (TreeConvLayer, RandomLayer)):
                nb.grad_z = np.zeros_like(nb.z)
        blocks.append(nb)
    return Network(net.spec, blocks, net.head, net.wiring_seed)


def batch_loss_and_grads(net: Network, x: np.ndarray, labels: np.ndarray,
                         threads: int = 1):
    """Forward/backward over one batch; fills net's grad buffers.

    With threads > 1 the batch is sharded; per-shard gradients merge in shard
    order so results are bitwise reproducible for a fixed thread count.
    """
    net.zero_grad()
    if threads <= 1 or x.shape[0] < 2 * threads:
        scores, caches = net.forward(x, train=True)
        loss, dscores = softmax_cross_entropy(scores, labels)
        net.backward(caches, dscores.astype(x.dtype))
        acc = float((scores.argmax(axis=1) == labels).mean())
        return loss, acc

    shards = np.array_split(np.arange(x.shape[0]), threads)
    clones = [_worker_clone(net) for _ in shards]
    scores_parts = [None] * len(shards)

    def fwd(i):
        scores, caches = clones[i].forward(x[shards[i]], train=True)
        scores_parts[i] = scores
        return caches

    with ThreadPoolExecutor(max_workers=threads) as pool:
        caches_parts = list(pool.map(fwd, range(len(shards))))
        scores = np.concatenate(scores_parts, axis=0)
        loss, dscores = softmax_cross_entropy(scores, labels)
        dscores = dscores.astype(x.dtype)

        def bwd(i):
            clones[i].backward(caches_parts[i], dscores[shards[i]])

        list(pool.map(bwd, range(len(shards))))

    for clone in clones:  # ordered, deterministic reduction
        for dst, src in zip(net.grads(), clone.grads()):
            dst += src
    acc = float((scores.argmax(axis=1) == labels).mean())
    return loss, acc


# ---------------------------------------------------------------------------
# Metrics


METRIC_FIELDS = ["step", "train_loss", "train_acc", "val_acc_soft", "val_acc_hard"]


class MetricsLog:
    """In-memory metric rows with optional CSV mirroring."""

    def __init__(self, path: str | None = None, n_blocks: int = 0):
        self.rows: list[dict] = []
        self.path = path
        self.fields = METRIC_FIELDS + [
            f"block{i}_{side}" for i in range(n_blocks) for side in ("pre", "post")
        ]
        if path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            with open(path, "w", newline="") as f:
                csv.writer(f).writerow(self.fields)

    def add(self, **row):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow([row.get(k, "") for k in self.fields])


@dataclass
class FitResult:
    best_val_hard: float
    best_step: int
    best_params: list
    metrics: MetricsLog
    final_step: int

    def restore_best(self, net: Network) -> Network:
        for p, best in zip(net.params(), self.best_params):
            p[...] = best
        return net


def fit(
    net: Network,
    train_planes: np.ndarray,
    train_labels: np.ndarray,
    config: TrainConfig,
    val_planes: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    metrics_path: str | None = None,
    log_blocks: bool = False,
    verbose: bool = False,
) -> FitResult:
    """Minibatch training with periodic validation and best-model retention.

    Every ``eval_interval`` steps (and at the end) the discretized network is
    scored on the validation set; the best-scoring parameters are kept. A
    non-finite loss aborts with a diagnostic.
    """
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    x_all = train_planes.reshape(train_planes.shape[0], *train_planes.shape[1:])
    n = x_all.shape[0]
    opt = AdamW(net.params(), lr=config.learning_rate,
                weight_decay=config.weight_decay)
    n_blocks = sum(isinstance(b, ConvBlock) for b in net.blocks)
    log = MetricsLog(metrics_path, n_blocks if log_blocks else 0)

    best = FitResult(-1.0, -1, [p.copy() for p in net.params()], log, 0)
    order = rng.permutation(n)
    cursor = 0
    run_loss, run_acc, run_count = 0.0, 0.0, 0

    def evaluate(step):
        nonlocal run_loss, run_acc, run_count
        row = {"step": step,
               "train_loss": run_loss / max(run_count, 1),
               "train_acc": run_acc / max(run_count, 1)}
        if val_planes is not None:
            row["val_acc_soft"] = soft_accuracy(net, val_planes, val_labels)
            row["val_acc_hard"] = hard_accuracy(net, val_planes, val_labels,
                                                threads=config.threads)
            if row["val_acc_hard"] > best.best_val_hard:
                best.best_val_hard = row["val_acc_hard"]
                best.best_step = step
                best.best_params = [p.copy() for p in net.params()]
        if log_blocks and val_planes is not None:
            sample = val_planes[:min(256, len(val_planes))]
            for i, (pre, post, _) in enumerate(activation_stats(net, sample)):
                row[f"block{i}_pre"] = pre
                row[f"block{i}_post"] = post
        log.add(**row)
        if verbose:
            print(
                f"step {step:6d} loss {row['train_loss']:.4f} "
                f"acc {row['train_acc']:.4f} "
                f"val soft {row.get('val_acc_soft', float('nan')):.4f} "
                f"hard {row.get('val_acc_hard', float('nan')):.4f}",
                flush=True,
            )
        run_loss, run_acc, run_count = 0.0, 0.0, 0

    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        x = x_all[idx].astype(dtype)
        y = train_labels[idx]
        loss, acc = batch_loss_and_grads(net, x, y, threads=config.threads)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {step}")
        opt.step(net.grads())
        run_loss += loss
        run_acc += acc
        run_count += 1
        if step % config.eval_interval == 0 or step == config.steps:
            evaluate(step)

    best.final_step = config.steps
    if best.best_step < 0:  # no validation set: keep the final parameters
        best.best_params = [p.copy() for p in net.params()]
        best.best_step = config.steps
    return best


# ---------------------------------------------------------------------------
# Gradient-decay diagnostic


def gradient_decay_profile(
    width: int = 512,
    depth: int = 10,
    batch: int = 64,
    init: str = "gaussian",
    strength: float = 5.0,
    seed: int = 0,
) -> np.ndarray:
    """Per-layer backward gradient-norm ratios of a fresh random-wired stack.

    Builds ``depth`` equal-width random layers, pushes random bits forward,
    injects a unit-Gaussian upstream gradient at the top, and returns
    ||g_l|| / ||g_{l+1}|| for each interior layer boundary, i.e. how much the
    gradient norm shrinks per gate layer on the way down.
    """
    rng = np.random.default_rng(seed)
    stack = [
        RandomLayer(width, width, rng=rng, init=init, strength=strength,
                    dtype=np.float64)
        for _ in range(depth)
    ]
    x = (rng.random((batch, width)) < 0.5).astype(np.float64)
    acts = [x]
    for layer in stack:
        acts.append(layer.forward(acts[-1]))
    g = rng.standard_normal((batch, width))
    norms = [float(np.linalg.norm(g))]
    for layer, act in zip(reversed(stack), reversed(acts[:-1])):
        g = layer.backward(act, g)
        norms.append(float(np.linalg.norm(g)))
    norms = norms[::-1]  # bottom-up: norms[l] = gradient norm entering layer l
    return np.array([norms[l] / norms[l + 1] for l in range(1, depth)])


def mean_gradient_decay(seeds=range(10), **kw) -> float:
    ratios = [gradient_decay_profile(seed=s, **kw).mean() for s in seeds]
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str, net: Network, config: TrainConfig | None = None,
                    step: int = 0) -> None:
    """Single-file checkpoint: JSON manifest + little-endian float32 blob."""
    params = net.params()
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "spec": net.spec.to_manifest(),
        "wiring_seed": net.wiring_seed,
        "step": int(step),
        "config": asdict(config) if config else None,
        "param_shapes": [list(p.shape) for p in params],
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path: str, dtype=np.float32):
    """Rebuild the network (wiring resampled from the stored seed) and params."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(hlen).decode())
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {manifest.get('format_version')}"
            )
        spec = ModelSpec.from_manifest(manifest["spec"])
        net = build_network(spec, seed=manifest["wiring_seed"], dtype=dtype)
        for p, shape in zip(net.params(), manifest["param_shapes"]):
            if list(p.shape) != shape:
                raise ValueError("checkpoint parameter shapes do not match spec")
            raw = f.read(int(np.prod(shape)) * 4)
            p[...] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)
    return net, manifest
