"""Hard gate networks: discretization, simplification, reference evaluation.

A HardNet is a flat DAG over "wires". Wire 0 is constant false, wire 1
constant true, wires 2..2+n_inputs-1 are the primary inputs, and node i
drives wire 2 + n_inputs + i. References always point backward, so the node
arrays are already in a valid topological order. Convolution placements are
fully unrolled into distinct nodes; zero padding turns into the constant-0
wire; or-pooling becomes trees of OR gates; the group-sum head becomes one
output wire group per class, scored by integer popcount.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gates import (
    NUM_GATES,
    SWAPPED,
    TRUTH,
    restrict_gate,
    restrict_gate_equal_inputs,
)
from .layers import ConvBlock, TreeConvLayer, node_probs

WIRE_FALSE = 0
WIRE_TRUE = 1

NETLIST_VERSION = 1


@dataclass
class HardNet:
    n_inputs: int
    gate: np.ndarray          # (G,) uint8 gate index per node
    ref_a: np.ndarray         # (G,) int64 wire id of first input
    ref_b: np.ndarray         # (G,) int64 wire id of second input
    outputs: tuple            # per class: int64 array of wire ids
    layer_of: np.ndarray      # (G,) int32 model-layer tag (-1 = structural)
    tau: float = 1.0

    def __post_init__(self):
        self.gate = np.asarray(self.gate, dtype=np.uint8)
        self.ref_a = np.asarray(self.ref_a, dtype=np.int64)
        self.ref_b = np.asarray(self.ref_b, dtype=np.int64)
        self.outputs = tuple(np.asarray(o, dtype=np.int64) for o in self.outputs)
        self.layer_of = np.asarray(self.layer_of, dtype=np.int32)

    @property
    def num_nodes(self) -> int:
        return self.gate.shape[0]

    @property
    def num_wires(self) -> int:
        return 2 + self.n_inputs + self.num_nodes

    @property
    def classes(self) -> int:
        return len(self.outputs)

    def node_wire(self, i: int) -> int:
        return 2 + self.n_inputs + i

    def validate(self) -> None:
        w = 2 + self.n_inputs + np.arange(self.num_nodes)
        if self.num_nodes and (np.any(self.ref_a >= w) or np.any(self.ref_b >= w)):
            raise ValueError("forward reference: DAG must point strictly backward")
        if self.num_nodes and (self.ref_a.min() < 0 or self.ref_b.min() < 0):
            raise ValueError("negative wire reference")
        for grp in self.outputs:
            if grp.size and grp.max() >= self.num_wires:
                raise ValueError("output references missing wire")

    def levels(self) -> np.ndarray:
        """Topological depth per node (inputs/constants are depth 0)."""
        cached = getattr(self, "_levels", None)
        if cached is not None:
            return cached
        depth = np.zeros(self.num_wires, dtype=np.int32)
        base = 2 + self.n_inputs
        ra, rb = self.ref_a, self.ref_b
        for i in range(self.num_nodes):
            a, b = depth[ra[i]], depth[rb[i]]
            depth[base + i] = (a if a > b else b) + 1
        self._levels = depth[base:]
        return self._levels

    def structurally_equal(self, other: "HardNet") -> bool:
        return (
            self.n_inputs == other.n_inputs
            and np.array_equal(self.gate, other.gate)
            and np.array_equal(self.ref_a, other.ref_a)
            and np.array_equal(self.ref_b, other.ref_b)
            and len(self.outputs) == len(other.outputs)
            and all(np.array_equal(a, b) for a, b in zip(self.outputs, other.outputs))
        )

    # -- serialization (the .lgn.json schema) ---------------------------
    def to_json_dict(self, stats: dict | None = None) -> dict:
        def ref(w):
            if w == WIRE_FALSE:
                return "c0"
            if w == WIRE_TRUE:
                return "c1"
            if w < 2 + self.n_inputs:
                return f"i{w - 2}"
            return f"n{w - 2 - self.n_inputs}"

        return {
            "version": NETLIST_VERSION,
            "inputs": [f"i{k}" for k in range(self.n_inputs)],
            "nodes": [
                {"id": i, "gate": int(self.gate[i]),
                 "in": [ref(int(self.ref_a[i])), ref(int(self.ref_b[i]))]}
                for i in range(self.num_nodes)
            ],
            "outputs": [[ref(int(w)) for w in grp] for grp in self.outputs],
            "stats": stats or {},
        }

    @staticmethod
    def from_json_dict(d: dict) -> "HardNet":
        if d.get("version") != NETLIST_VERSION:
            raise ValueError(f"unsupported netlist version {d.get('version')!r}")
        n_inputs = len(d["inputs"])

        def unref(s: str) -> int:
            if s == "c0":
                return WIRE_FALSE
            if s == "c1":
                return WIRE_TRUE
            if s.startswith("i"):
                return 2 + int(s[1:])
            if s.startswith("n"):
                return 2 + n_inputs + int(s[1:])
            raise ValueError(f"bad wire reference {s!r}")

        nodes = d["nodes"]
        gate = np.array([n["gate"] for n in nodes], dtype=np.uint8)
        ref_a = np.array([unref(n["in"][0]) for n in nodes], dtype=np.int64)
        ref_b = np.array([unref(n["in"][1]) for n in nodes], dtype=np.int64)
        outputs = tuple(
            np.array([unref(s) for s in grp], dtype=np.int64) for grp in d["outputs"]
        )
        net = HardNet(
            n_inputs=n_inputs, gate=gate, ref_a=ref_a, ref_b=ref_b,
            outputs=outputs, layer_of=np.full(len(nodes), -1, dtype=np.int32),
        )
        net.validate()
        return net


@dataclass
class Netlist:
    """A simplified HardNet plus bookkeeping for reports and export."""

    net: HardNet
    stats: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.net.num_nodes


# ---------------------------------------------------------------------------
# Discretization of a trained network


def discretize(network) -> HardNet:
    """Materialize the argmax-gate network of a trained model.

    Every softmax mixture collapses to its most probable gate (ties to the
    lowest index), convolution placements unroll into individual nodes,
    pooling windows become 3-OR trees, and padded positions read constant 0.
    """
    spec = network.spec
    gate_chunks, ra_chunks, rb_chunks, layer_chunks = [], [], [], []
    next_wire = 2 + spec.in_channels * spec.in_height * spec.in_width

    def alloc(count: int) -> np.ndarray:
        nonlocal next_wire
        ids = np.arange(next_wire, next_wire + count, dtype=np.int64)
        next_wire += count
        return ids

    def emit(gates_arr, ra, rb, tag):
        gate_chunks.append(np.asarray(gates_arr, dtype=np.uint8).ravel())
        ra_chunks.append(np.asarray(ra, dtype=np.int64).ravel())
        rb_chunks.append(np.asarray(rb, dtype=np.int64).ravel())
        layer_chunks.append(np.full(gate_chunks[-1].size, tag, dtype=np.int32))
        return alloc(gate_chunks[-1].size)

    grid = np.arange(
        2, 2 + spec.in_channels * spec.in_height * spec.in_width, dtype=np.int64
    ).reshape(spec.in_channels, spec.in_height, spec.in_width)

    for tag, block in enumerate(network.blocks):
        if isinstance(block, (ConvBlock, TreeConvLayer)):
            tree = block.tree if isinstance(block, ConvBlock) else block
            grid = _unroll_tree_conv(tree, grid, emit, tag)
            if isinstance(block, ConvBlock):
                grid = _unroll_or_pool(grid, emit)
        else:  # RandomLayer
            flat = grid.reshape(-1) if grid.ndim > 1 else grid
            hard = _argmax_gates(block)
            wires = emit(hard, flat[block.idx_a], flat[block.idx_b], tag)
            grid = wires

    flat = grid.reshape(-1)
    per_class = flat.size // spec.classes
    outputs = tuple(
        flat[c * per_class:(c + 1) * per_class] for c in range(spec.classes)
    )
    net = HardNet(
        n_inputs=spec.in_channels * spec.in_height * spec.in_width,
        gate=np.concatenate(gate_chunks) if gate_chunks else np.zeros(0, np.uint8),
        ref_a=np.concatenate(ra_chunks) if ra_chunks else np.zeros(0, np.int64),
        ref_b=np.concatenate(rb_chunks) if rb_chunks else np.zeros(0, np.int64),
        outputs=outputs,
        layer_of=np.concatenate(layer_chunks) if layer_chunks else np.zeros(0, np.int32),
        tau=spec.tau,
    )
    net.validate()
    return net


def _argmax_gates(layer) -> np.ndarray:
    if layer.hard is not None:
        return np.asarray(layer.hard, dtype=np.uint8)
    return np.argmax(node_probs(layer.z), axis=-1).astype(np.uint8)


def _unroll_tree_conv(tree: TreeConvLayer, grid: np.ndarray, emit, tag) -> np.ndarray:
    conn = tree.conn
    c, h, w = grid.shape
    p = tree.padding
    oh, ow = tree.out_shape(h, w)
    padded = np.full((c, h + 2 * p, w + 2 * p), WIRE_FALSE, dtype=np.int64)
    padded[:, p:p + h, p:p + w] = grid

    chan = conn.chan[:, :, None, None]
    rows = conn.row[:, :, None, None] + np.arange(oh)[None, None, :, None]
    cols = conn.col[:, :, None, None] + np.arange(ow)[None, None, None, :]
    leaves = padded[chan, rows, cols]  # (n, 2^d, oh, ow)

    hard = _argmax_gates(tree)  # (n, nodes_per_kernel)
    v = leaves
    offset = 0
    for level in range(tree.depth):
        width = 2 ** (tree.depth - 1 - level)
        a = v[:, 0::2]
        b = v[:, 1::2]
        g = np.broadcast_to(
            hard[:, offset:offset + width, None, None], a.shape
        )
        wires = emit(g, a, b, tag)
        v = wires.reshape(a.shape)
        offset += width
    return v[:, 0]  # (n, oh, ow)


def _unroll_or_pool(grid: np.ndarray, emit) -> np.ndarray:
    c, h, w = grid.shape
    win = grid.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4
    )
    or_gate = np.full(win.shape[:3], 7, dtype=np.uint8)
    top = emit(or_gate, win[..., 0], win[..., 1], -1).reshape(win.shape[:3])
    bot = emit(or_gate, win[..., 2], win[..., 3], -1).reshape(win.shape[:3])
    out = emit(or_gate, top, bot, -1).reshape(win.shape[:3])
    return out


# ---------------------------------------------------------------------------
# Reference evaluation


def eval_discrete(net: HardNet, bits: np.ndarray) -> np.ndarray:
    """Integer class scores via one topological sweep.

    ``bits`` is (n_inputs,) for one sample or (batch, n_inputs). Scores count
    active wires per class group; the training temperature never enters.
    """
    bits = np.asarray(bits)
    squeeze = bits.ndim == 1
    if squeeze:
        bits = bits[None, :]
    if bits.shape[1] != net.n_inputs:
        raise ValueError(f"input width {bits.shape[1]} != {net.n_inputs}")
    if net.n_inputs == 0:
        raise ValueError("net has no inputs")
    batch = bits.shape[0]
    wires = np.zeros((batch, net.num_wires), dtype=np.uint8)
    wires[:, WIRE_TRUE] = 1
    wires[:, 2:2 + net.n_inputs] = bits != 0

    levels = net.levels()
    tt_flat = TRUTH.astype(np.uint8).ravel()
    base = 2 + net.n_inputs
    order = np.argsort(levels, kind="stable")
    bounds = np.searchsorted(levels[order], np.arange(1, levels.max() + 2 if levels.size else 1))
    start = 0
    for end in bounds:
        idx = order[start:end]
        if idx.size == 0:
            start = end
            continue
        a = wires[:, net.ref_a[idx]]
        b = wires[:, net.ref_b[idx]]
        key = (net.gate[idx].astype(np.int64) << 2) | (a.astype(np.int64) << 1) | b
        wires[:, base + idx] = tt_flat[key]
        start = end

    scores = np.stack(
        [wires[:, grp].sum(axis=1, dtype=np.int64) for grp in net.outputs], axis=1
    )
    return scores[0] if squeeze else scores


# ---------------------------------------------------------------------------
# Simplification (the logic-synthesis pass)


def _sweep(net: HardNet) -> HardNet:
    """One forward rewrite pass: constant folding, unary elision, NOT-pair
    collapse, operand canonicalization, and structural deduplication."""
    n_in = net.n_inputs
    base = 2 + n_in
    # alias[old wire] = equivalent wire in the NEW numbering; constants and
    # inputs share ids across numberings, node ids are reassigned densely.
    alias = np.arange(net.num_wires, dtype=np.int64)
    not_src = {}   # new wire -> new wire it negates
    dedup = {}     # (gate, new ra, new rb) -> new wire
    out_gate, out_ra, out_rb, out_layer = [], [], [], []

    def const_of(w):
        if w == WIRE_FALSE:
            return 0
        if w == WIRE_TRUE:
            return 1
        return None

    def fresh(g, ra, rb, tag):
        key = (int(g), int(ra), int(rb))
        hit = dedup.get(key)
        if hit is not None:
            return hit
        out_gate.append(g)
        out_ra.append(ra)
        out_rb.append(rb)
        out_layer.append(tag)
        wire = base + len(out_gate) - 1
        dedup[key] = wire
        return wire

    def make_not(x, tag):
        inner = not_src.get(x)
        if inner is not None:
            return inner
        cx = const_of(x)
        if cx is not None:
            return WIRE_TRUE if cx == 0 else WIRE_FALSE
        wire = fresh(12, x, x, tag)  # gate 12 = NOT of the first input
        not_src.setdefault(wire, x)
        return wire

    for i in range(net.num_nodes):
        w = base + i
        g = int(net.gate[i])
        ra = int(alias[net.ref_a[i]])
        rb = int(alias[net.ref_b[i]])
        tag = int(net.layer_of[i])

        if g == 0:
            alias[w] = WIRE_FALSE
            continue
        if g == 15:
            alias[w] = WIRE_TRUE
            continue
        ca, cb = const_of(ra), const_of(rb)
        if ca is not None and cb is not None:
            alias[w] = WIRE_TRUE if TRUTH[g, 2 * ca + cb] else WIRE_FALSE
            continue
        if ca is not None or cb is not None or ra == rb:
            if ra == rb and ca is None:
                kind, val = restrict_gate_equal_inputs(g)
                operand = ra
            elif ca is not None:
                kind, val = restrict_gate(g, 0, ca)
                operand = rb
            else:
                kind, val = restrict_gate(g, 1, cb)
                operand = ra
            if kind == "const":
                alias[w] = WIRE_TRUE if val else WIRE_FALSE
            elif kind == "pass":
                alias[w] = operand
            else:
                alias[w] = make_not(operand, tag)
            continue
        # pure unary gates expressed in binary form
        if g == 3:
            alias[w] = ra
            continue
        if g == 5:
            alias[w] = rb
            continue
        if g == 12:
            alias[w] = make_not(ra, tag)
            continue
        if g == 10:
            alias[w] = make_not(rb, tag)
            continue
        if ra > rb:  # canonical operand order for symmetric dedup
            ra, rb = rb, ra
            g = int(SWAPPED[g])
        alias[w] = fresh(g, ra, rb, tag)

    outputs = tuple(alias[grp] for grp in net.outputs)
    return HardNet(
        n_inputs=n_in,
        gate=np.array(out_gate, dtype=np.uint8),
        ref_a=np.array(out_ra, dtype=np.int64),
        ref_b=np.array(out_rb, dtype=np.int64),
        outputs=outputs,
        layer_of=np.array(out_layer, dtype=np.int32),
        tau=net.tau,
    )


def _dead_code_eliminate(net: HardNet) -> HardNet:
    base = 2 + net.n_inputs
    live = np.zeros(net.num_wires, dtype=bool)
    for grp in net.outputs:
        live[grp] = True
    for i in range(net.num_nodes - 1, -1, -1):
        if live[base + i]:
            live[net.ref_a[i]] = True
            live[net.ref_b[i]] = True
    keep = live[base:]
    if keep.all():
        return net
    remap = np.full(net.num_wires, -1, dtype=np.int64)
    remap[:base] = np.arange(base)
    remap[base:][keep] = base + np.arange(int(keep.sum()))
    return HardNet(
        n_inputs=net.n_inputs,
        gate=net.gate[keep],
        ref_a=remap[net.ref_a[keep]],
        ref_b=remap[net.ref_b[keep]],
        outputs=tuple(remap[grp] for grp in net.outputs),
        layer_of=net.layer_of[keep],
        tau=net.tau,
    )


def simplify(net: HardNet, max_rounds: int = 20) -> Netlist:
    """Iterate rewrite passes to a fixpoint; function-preserving by design.

    Gate count never increases: every rewrite replaces a node by a constant,
    an existing wire, or a deduplicated equivalent. The pass list runs until
    the structure stops changing.
    """
    before = net.num_nodes
    current = net
    for _ in range(max_rounds):
        nxt = _dead_code_eliminate(_sweep(current))
        if nxt.structurally_equal(current):
            current = nxt
            break
        current = nxt
    current.validate()
    hist = np.bincount(current.gate, minlength=NUM_GATES).astype(int)
    depth = int(current.levels().max()) if current.num_nodes else 0
    stats = {
        "nodes_before": int(before),
        "nodes_after": int(current.num_nodes),
        "depth": depth,
        "gate_histogram": hist.tolist(),
    }
    return Netlist(net=current, stats=stats)


# ---------------------------------------------------------------------------
# Diagnostics


def gate_histogram(obj, per_layer: bool = True) -> np.ndarray:
    """16-bin gate-choice counts, one row per model layer.

    Accepts a live network (argmax of each trainable block's mixtures) or a
    HardNet (tagged nodes; structural pool/adder gates report as row -1,
    dropped here).
    """
    if isinstance(obj, HardNet):
        tags = obj.layer_of
        gates_arr = obj.gate
        rows = []
        for t in sorted(set(int(x) for x in np.unique(tags)) - {-1}):
            rows.append(np.bincount(gates_arr[tags == t], minlength=NUM_GATES))
        if not per_layer:
            return np.sum(rows, axis=0, keepdims=True) if rows else np.zeros((1, NUM_GATES), int)
        return np.array(rows, dtype=int)
    # live network
    rows = []
    for block in obj.blocks:
        layer = block.tree if isinstance(block, ConvBlock) else block
        hard = _argmax_gates(layer).ravel()
        rows.append(np.bincount(hard, minlength=NUM_GATES))
    if not per_layer:
        return np.sum(rows, axis=0, keepdims=True)
    return np.array(rows, dtype=int)
