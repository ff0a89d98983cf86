"""LogicTreeNet architectures: declarative specs, construction, gate counting.

A ModelSpec is a flat, serializable description of the layer stack plus the
training defaults that go with each published size tag. ``build_network``
turns a spec into live layer objects with freshly sampled (seed-determined)
wiring.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    ConvBlock,
    GroupSumHead,
    RandomLayer,
    TreeConvLayer,
    sample_connections,
)

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ConvSpec:
    kernels: int
    s_h: int
    s_w: int
    depth: int = 3
    padding: int = 0
    pool: bool = True

    @property
    def nodes_per_kernel(self) -> int:
        return 2 ** self.depth - 1


@dataclass(frozen=True)
class RandomSpec:
    out_size: int
    class_major: bool = False


@dataclass(frozen=True)
class ModelSpec:
    dataset: str
    size_tag: str
    k: int
    ox: int
    input_bits: int
    in_channels: int
    in_height: int
    in_width: int
    tau: float
    learning_rate: float
    weight_decay: float
    batch_size: int
    eval_interval: int
    groups: int
    layers: tuple
    classes: int = 10

    # -- shape/bookkeeping ------------------------------------------------
    def shapes(self):
        """Per-layer output shapes: (layer name, shape) with the input first."""
        out = [("input", (self.in_channels, self.in_height, self.in_width))]
        c, h, w = self.in_channels, self.in_height, self.in_width
        flat = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvSpec):
                h = h - layer.s_h + 1 + 2 * layer.padding
                w = w - layer.s_w + 1 + 2 * layer.padding
                c = layer.kernels
                out.append((f"conv{i}", (c, h, w)))
                if layer.pool:
                    if h % 2 or w % 2:
                        raise ValueError(f"cannot pool odd shape {h}x{w} at layer {i}")
                    h //= 2
                    w //= 2
                    out.append((f"pool{i}", (c, h, w)))
            elif isinstance(layer, RandomSpec):
                if flat is None:
                    flat = c * h * w
                    out.append(("flatten", (flat,)))
                flat = layer.out_size
                out.append((f"random{i}", (flat,)))
            else:
                raise TypeError(f"unknown layer spec {layer!r}")
        if flat is None:
            raise ValueError("spec has no random layer before the head")
        if flat % self.classes:
            raise ValueError(f"last width {flat} not divisible by {self.classes} classes")
        out.append(("groupsum", (self.classes,)))
        return out

    @property
    def outputs_per_class(self) -> int:
        return self.shapes()[-2][1][0] // self.classes

    @property
    def max_score(self) -> float:
        return self.outputs_per_class / self.tau

    # -- serialization ----------------------------------------------------
    def to_manifest(self) -> dict:
        d = asdict(self)
        d["layers"] = [
            {"type": "conv", **asdict(l)} if isinstance(l, ConvSpec)
            else {"type": "random", **asdict(l)}
            for l in self.layers
        ]
        d["manifest_version"] = MANIFEST_VERSION
        return d

    @staticmethod
    def from_manifest(d: dict) -> "ModelSpec":
        if d.get("manifest_version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('manifest_version')}")
        d = dict(d)
        d.pop("manifest_version")
        layers = []
        for l in d.pop("layers"):
            l = dict(l)
            kind = l.pop("type")
            layers.append(ConvSpec(**l) if kind == "conv" else RandomSpec(**l))
        return ModelSpec(layers=tuple(layers), **d)

    def to_json(self) -> str:
        return json.dumps(self.to_manifest(), sort_keys=True)

    @staticmethod
    def from_json(s: str) -> "ModelSpec":
        return ModelSpec.from_manifest(json.loads(s))


# ---------------------------------------------------------------------------
# Published size tables (per architecture family)

CIFAR_SIZES = {
    "S": dict(k=32, tau=20.0, learning_rate=0.02, weight_decay=0.002, batch_size=128, ox=1, input_bits=2),
    "M": dict(k=256, tau=40.0, learning_rate=0.02, weight_decay=0.002, batch_size=128, ox=1, input_bits=2),
    "B": dict(k=512, tau=280.0, learning_rate=0.02, weight_decay=0.002, batch_size=128, ox=2, input_bits=5),
    "L": dict(k=1024, tau=340.0, learning_rate=0.02, weight_decay=0.002, batch_size=128, ox=2, input_bits=5),
    "G": dict(k=2048, tau=450.0, learning_rate=0.02, weight_decay=0.001, batch_size=128, ox=1, input_bits=5),
}

MNIST_SIZES = {
    "S": dict(k=16, tau=6.5, learning_rate=0.01, weight_decay=0.0, batch_size=512, ox=2, input_bits=1),
    "M": dict(k=64, tau=28.0, learning_rate=0.01, weight_decay=0.0, batch_size=256, ox=2, input_bits=1),
    "L": dict(k=1024, tau=35.0, learning_rate=0.01, weight_decay=0.0, batch_size=128, ox=1, input_bits=1),
}

EVAL_INTERVAL = {"cifar10": 2000, "mnist": 5000}


def build_logictreenet(dataset: str, size_tag: str, overrides: dict | None = None) -> ModelSpec:
    """Spec for a published architecture size, with any field overridable.

    The CIFAR stack is 4 tree-conv blocks (k, 4k, 16k, 32k kernels; 3x3,
    depth 3, padded) each followed by or-pooling, then three random layers
    1280k*ox -> 640k*ox -> 320k*ox and the group-sum head. The MNIST stack
    drops to 3 blocks (5x5 unpadded first, then two padded 3x3) with channel
    factors 1/3/9. ``overrides`` may replace any size-table entry (k, ox,
    tau, input_bits, ...) or spec field (groups, classes, ...).
    """
    overrides = dict(overrides or {})
    dataset = dataset.lower()
    tables = {"cifar10": CIFAR_SIZES, "mnist": MNIST_SIZES}
    if dataset not in tables:
        raise ValueError(f"unknown dataset {dataset!r} (mnist or cifar10)")
    table = tables[dataset]
    if size_tag not in table:
        if not overrides:
            raise ValueError(f"unknown size tag {size_tag!r} for {dataset} and no overrides")
        base = {}
    else:
        base = dict(table[size_tag])
    base.update({k: v for k, v in overrides.items() if k in (
        "k", "ox", "tau", "learning_rate", "weight_decay", "batch_size", "input_bits")})
    missing = {"k", "ox", "tau", "learning_rate", "weight_decay", "batch_size", "input_bits"} - set(base)
    if missing:
        raise ValueError(f"size tag {size_tag!r} underspecified; missing {sorted(missing)}")

    k, ox, bits = base["k"], base["ox"], base["input_bits"]
    planes_per_channel = 2 ** bits - 1
    groups = overrides.get("groups", max(1, k // 8))

    if dataset == "cifar10":
        in_c, h, w = 3 * planes_per_channel, 32, 32
        convs = [ConvSpec(k, 3, 3, 3, 1), ConvSpec(4 * k, 3, 3, 3, 1),
                 ConvSpec(16 * k, 3, 3, 3, 1), ConvSpec(32 * k, 3, 3, 3, 1)]
    else:
        in_c, h, w = 1 * planes_per_channel, 28, 28
        convs = [ConvSpec(k, 5, 5, 3, 0), ConvSpec(3 * k, 3, 3, 3, 1),
                 ConvSpec(9 * k, 3, 3, 3, 1)]
    rands = [RandomSpec(1280 * k * ox), RandomSpec(640 * k * ox),
             RandomSpec(320 * k * ox, class_major=True)]

    spec = ModelSpec(
        dataset=dataset,
        size_tag=size_tag,
        k=k,
        ox=ox,
        input_bits=bits,
        in_channels=in_c,
        in_height=h,
        in_width=w,
        tau=base["tau"],
        learning_rate=base["learning_rate"],
        weight_decay=base["weight_decay"],
        batch_size=base["batch_size"],
        eval_interval=overrides.get("eval_interval", EVAL_INTERVAL[dataset]),
        groups=groups,
        layers=tuple(convs + rands),
        classes=overrides.get("classes", 10),
    )
    spec.shapes()  # validate early
    return spec


def custom_spec(in_shape, layers, tau=1.0, classes=10, **kw) -> ModelSpec:
    """Free-form spec for toy and ablation models."""
    c, h, w = in_shape
    defaults = dict(
        dataset="custom", size_tag="custom", k=0, ox=1, input_bits=1,
        learning_rate=0.01, weight_decay=0.0, batch_size=32, eval_interval=1000,
        groups=1,
    )
    defaults.update(kw)
    spec = ModelSpec(in_channels=c, in_height=h, in_width=w, tau=tau,
                     classes=classes, layers=tuple(layers), **defaults)
    spec.shapes()
    return spec


# ---------------------------------------------------------------------------
# Gate counting


@dataclass(frozen=True)
class GateCountReport:
    """Learnable-node and per-placement hardware gate totals."""

    trainable: int
    hardware: int
    per_layer: tuple  # rows of (name, trainable, hardware)

    def as_rows(self):
        return [("layer", "trainable", "hardware")] + [
            (n, str(t), str(h)) for n, t, h in self.per_layer
        ]


def count_gates(spec: ModelSpec) -> GateCountReport:
    """Count gates both as learnable nodes and as materialized hardware.

    Hardware counts unroll every convolution placement, charge 3 OR gates per
    pooled output (a 2x2 window needs 3 two-input ors), and charge the
    asymptotic 7 adder gates per final-layer wire for the per-class popcount.
    No synthesis simplifications are applied here.
    """
    rows = []
    c, h, w = spec.in_channels, spec.in_height, spec.in_width
    flat = None
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, ConvSpec):
            h = h - layer.s_h + 1 + 2 * layer.padding
            w = w - layer.s_w + 1 + 2 * layer.padding
            c = layer.kernels
            t = layer.kernels * layer.nodes_per_kernel
            hw = layer.kernels * h * w * layer.nodes_per_kernel
            rows.append((f"conv{i}", t, hw))
            if layer.pool:
                h //= 2
                w //= 2
                rows.append((f"pool{i}", 0, c * h * w * 3))
        else:
            flat = layer.out_size
            rows.append((f"random{i}", layer.out_size, layer.out_size))
    rows.append(("popcount", 0, 7 * flat))
    return GateCountReport(
        trainable=sum(r[1] for r in rows),
        hardware=sum(r[2] for r in rows),
        per_layer=tuple(rows),
    )


# ---------------------------------------------------------------------------
# Live network


class Network:
    """Layer objects built from a spec; owns parameters and the flatten point.

    ``blocks`` holds ConvBlock / TreeConvLayer / RandomLayer instances in
    order; the group-sum head sits apart so callers can reach pre-head wires.
    """

    def __init__(self, spec: ModelSpec, blocks, head: GroupSumHead, wiring_seed: int):
        self.spec = spec
        self.blocks = blocks
        self.head = head
        self.wiring_seed = wiring_seed

    # -- parameter plumbing -------------------------------------------
    def params(self):
        return [p for b in self.blocks for p in b.params()]

    def grads(self):
        return [g for b in self.blocks for g in b.grads()]

    def zero_grad(self):
        for b in self.blocks:
            b.zero_grad()

    def num_trainable_nodes(self) -> int:
        return sum(int(np.prod(p.shape[:-1])) for p in self.params())

    def harden(self):
        for b in self.blocks:
            target = b.tree if isinstance(b, ConvBlock) else b
            target.harden()
        return self

    def unharden(self):
        for b in self.blocks:
            target = b.tree if isinstance(b, ConvBlock) else b
            target.hard = None
        return self

    # -- execution ------------------------------------------------------
    def forward(self, x: np.ndarray, train: bool = False, stats: list | None = None):
        """Class scores for a batch; with train=True also returns caches.

        ``stats`` (a list) collects (pre-pool mean, post-pool mean) per conv
        block for activation-density diagnostics.
        """
        caches = [] if train else None
        cur = x
        for b in self.blocks:
            if isinstance(b, ConvBlock):
                if stats is not None:
                    pre = b.tree.forward(cur)
                    out, idx = b.pool.forward(pre)
                    stats.append((float(pre.mean()), float(out.mean())))
                    cache = (cur, idx, pre.shape)
                else:
                    out, cache = b.forward(cur)
                if train:
                    caches.append(cache)
                cur = out
            elif isinstance(b, TreeConvLayer):
                if train:
                    caches.append(cur)
                cur = b.forward(cur)
            else:  # RandomLayer
                if cur.ndim > 2:
                    cur = cur.reshape(cur.shape[0], -1)
                if train:
                    caches.append(cur)
                cur = b.forward(cur)
        if cur.ndim > 2:
            cur = cur.reshape(cur.shape[0], -1)
        scores = self.head.forward(cur)
        if train:
            caches.append(cur.shape[1])
            return scores, caches
        return scores

    def backward(self, caches, dscores: np.ndarray):
        """Accumulate parameter gradients; returns gradient wrt the input."""
        g = self.head.backward(dscores, caches[-1])
        for b, cache in zip(reversed(self.blocks), reversed(caches[:-1])):
            if isinstance(b, ConvBlock):
                if g.ndim == 2:  # coming back through flatten
                    want = cache[2]
                    g = g.reshape(g.shape[0], want[1], want[2] // 2, want[3] // 2)
                g = b.backward(cache, g)
            elif isinstance(b, TreeConvLayer):
                if g.ndim == 2:
                    oh, ow = b.out_shape(cache.shape[2], cache.shape[3])
                    g = g.reshape(g.shape[0], b.conn.kernels, oh, ow)
                g = b.backward(cache, g)
            else:
                g = b.backward(cache, g)
        return g


def build_network(
    spec: ModelSpec,
    seed: int = 0,
    init: str = "residual",
    strength: float = 5.0,
    dtype=np.float32,
) -> Network:
    """Instantiate layers with seed-determined wiring and initialization.

    The same (spec, seed) pair always reproduces identical wiring, so
    checkpoints only need to store the seed and the logits.
    """
    ss = np.random.SeedSequence(seed)
    blocks = []
    c, h, w = spec.in_channels, spec.in_height, spec.in_width
    flat = None
    for layer in spec.layers:
        child = np.random.default_rng(ss.spawn(1)[0])
        if isinstance(layer, ConvSpec):
            groups = spec.groups if (c % spec.groups == 0 and layer.kernels % spec.groups == 0) else 1
            conn = sample_connections(
                child, c, layer.s_h, layer.s_w, layer.kernels, layer.depth,
                channel_restriction=2, groups=groups,
            )
            tree = TreeConvLayer(conn, padding=layer.padding, init=init,
                                 rng=child, strength=strength, dtype=dtype)
            h = h - layer.s_h + 1 + 2 * layer.padding
            w = w - layer.s_w + 1 + 2 * layer.padding
            c = layer.kernels
            if layer.pool:
                blocks.append(ConvBlock(tree))
                h //= 2
                w //= 2
            else:
                blocks.append(tree)
        else:
            if flat is None:
                flat = c * h * w
            groups = spec.groups if (flat % spec.groups == 0 and layer.out_size % spec.groups == 0) else 1
            blocks.append(RandomLayer(
                flat, layer.out_size, rng=child, init=init, strength=strength,
                dtype=dtype, groups=groups,
                class_major=spec.classes if layer.class_major else 0,
            ))
            flat = layer.out_size
    head = GroupSumHead(classes=spec.classes, tau=spec.tau)
    return Network(spec, blocks, head, wiring_seed=seed)
