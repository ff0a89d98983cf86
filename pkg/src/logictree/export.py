"""Hardware-facing artifacts: popcount adder trees, structural Verilog,
and netlist JSON files.

The per-class score counters are built from half/full adders (2 and 5
two-input gates respectively) arranged as a balanced compressor tree, which
stays well under the asymptotic 7-gates-per-counted-wire budget. Verilog is
flat Verilog-2001 structural text: one wire and one assign per gate, using
only ~ & | ^ and the two constants, with deterministic names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .discrete import WIRE_FALSE, WIRE_TRUE, HardNet, Netlist

# gate expressions over (a, b) for the 16 truth-table encodings
_VERILOG_EXPR = (
    "1'b0",            # 0  FALSE
    "{a} & {b}",       # 1  AND
    "{a} & ~{b}",      # 2
    "{a}",             # 3  pass A
    "~{a} & {b}",      # 4
    "{b}",             # 5  pass B
    "{a} ^ {b}",       # 6  XOR
    "{a} | {b}",       # 7  OR
    "~({a} | {b})",    # 8  NOR
    "~({a} ^ {b})",    # 9  XNOR
    "~{b}",            # 10
    "{a} | ~{b}",      # 11
    "~{a}",            # 12
    "~{a} | {b}",      # 13
    "~({a} & {b})",    # 14 NAND
    "1'b1",            # 15 TRUE
)


@dataclass(frozen=True)
class AdderTree:
    """Gate-level popcount fragment appended to a net.

    ``sum_wires`` lists the result bits LSB first; evaluating them as a binary
    number recovers the number of set input wires.
    """

    sum_wires: tuple
    gates_added: int

    @property
    def result_bits(self) -> int:
        return len(self.sum_wires)


class _NetBuilder:
    """Append-only gate builder over an existing HardNet wire space."""

    def __init__(self, net: HardNet):
        self.n_inputs = net.n_inputs
        self.gate = list(net.gate)
        self.ref_a = list(net.ref_a)
        self.ref_b = list(net.ref_b)
        self.layer_of = list(net.layer_of)
        self.base = 2 + net.n_inputs

    def add(self, gate: int, a: int, b: int) -> int:
        self.gate.append(gate)
        self.ref_a.append(a)
        self.ref_b.append(b)
        self.layer_of.append(-2)  # adder-tree tag
        return self.base + len(self.gate) - 1

    def half_adder(self, a: int, b: int):
        return self.add(6, a, b), self.add(1, a, b)  # sum=XOR, carry=AND

    def full_adder(self, a: int, b: int, c: int):
        s1 = self.add(6, a, b)
        sum_ = self.add(6, s1, c)
        c1 = self.add(1, a, b)
        c2 = self.add(1, s1, c)
        carry = self.add(7, c1, c2)
        return sum_, carry


def build_adder_tree(builder_or_net, input_wires) -> tuple[HardNet | None, AdderTree]:
    """Popcount network over ``input_wires`` as a compressor tree.

    Weight-level queues are reduced with full adders (3 bits -> 2, 5 gates)
    and half adders (2 bits -> 2, 2 gates) until one bit remains per weight.
    Passing a HardNet builds onto a copy and returns (extended net, tree);
    passing a _NetBuilder appends in place and returns (None, tree).
    """
    own = isinstance(builder_or_net, HardNet)
    b = _NetBuilder(builder_or_net) if own else builder_or_net
    before = len(b.gate)
    queues = [list(map(int, input_wires))]
    result = []
    level = 0
    while level < len(queues):
        q = queues[level]
        while len(q) >= 2:
            if len(queues) <= level + 1:
                queues.append([])
            if len(q) >= 3:
                a, x, c = q.pop(0), q.pop(0), q.pop(0)
                s, carry = b.full_adder(a, x, c)
            else:
                a, x = q.pop(0), q.pop(0)
                s, carry = b.half_adder(a, x)
            q.append(s)
            queues[level + 1].append(carry)
        result.append(q[0] if q else WIRE_FALSE)
        level += 1
    tree = AdderTree(sum_wires=tuple(result), gates_added=len(b.gate) - before)
    if not own:
        return None, tree
    base_net = builder_or_net
    net = HardNet(
        n_inputs=base_net.n_inputs,
        gate=np.array(b.gate, np.uint8),
        ref_a=np.array(b.ref_a, np.int64),
        ref_b=np.array(b.ref_b, np.int64),
        outputs=base_net.outputs,
        layer_of=np.array(b.layer_of, np.int32),
        tau=base_net.tau,
    )
    return net, tree


def attach_popcount(net: HardNet):
    """Replace the counted output groups by adder-tree score buses.

    Returns (extended net, per-class AdderTree). The extended net's outputs
    are the score bits (LSB first) per class.
    """
    b = _NetBuilder(net)
    trees = []
    for grp in net.outputs:
        _, tree = build_adder_tree(b, grp)
        trees.append(tree)
    width = max(t.result_bits for t in trees) if trees else 0
    outputs = tuple(
        np.array(t.sum_wires + (WIRE_FALSE,) * (width - t.result_bits), np.int64)
        for t in trees
    )
    out = HardNet(
        n_inputs=net.n_inputs,
        gate=np.array(b.gate, np.uint8),
        ref_a=np.array(b.ref_a, np.int64),
        ref_b=np.array(b.ref_b, np.int64),
        outputs=outputs,
        layer_of=np.array(b.layer_of, np.int32),
        tau=net.tau,
    )
    out.validate()
    return out, trees


# ---------------------------------------------------------------------------
# Verilog


def _wire_name(net: HardNet, w: int) -> str:
    if w == WIRE_FALSE:
        return "1'b0"
    if w == WIRE_TRUE:
        return "1'b1"
    if w < 2 + net.n_inputs:
        return f"in[{w - 2}]"
    return f"n{w - 2 - net.n_inputs}"


def emit_verilog(net: HardNet, module_name: str = "logictreenet",
                 popcount: bool = True) -> str:
    """Flat structural module; deterministic text for a given net.

    With ``popcount`` the per-class outputs are score buses fed by adder
    trees; otherwise each class group is exported as a raw wire bus.
    """
    if popcount:
        net, _ = attach_popcount(net)
    lines = [f"module {module_name} ("]
    ports = [f"    input wire [{net.n_inputs - 1}:0] in"]
    for c, grp in enumerate(net.outputs):
        ports.append(f"    output wire [{len(grp) - 1}:0] score{c}")
    lines.append(",\n".join(ports))
    lines.append(");")
    for i in range(net.num_nodes):
        lines.append(f"  wire n{i};")
    for i in range(net.num_nodes):
        expr = _VERILOG_EXPR[net.gate[i]].format(
            a=_wire_name(net, int(net.ref_a[i])),
            b=_wire_name(net, int(net.ref_b[i])),
        )
        lines.append(f"  assign n{i} = {expr};")
    for c, grp in enumerate(net.outputs):
        bits = ", ".join(_wire_name(net, int(w)) for w in reversed(grp))
        lines.append(f"  assign score{c} = {{{bits}}};")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Netlist JSON


def emit_netlist_json(net: HardNet | Netlist, path: str | None = None) -> str:
    """Serialize to the .lgn.json schema; optionally write to disk."""
    if isinstance(net, Netlist):
        doc = net.net.to_json_dict(stats=net.stats)
    else:
        doc = net.to_json_dict()
    text = json.dumps(doc, indent=1)
    if path:
        with open(path, "w") as f:
            f.write(text)
    return text


def load_netlist_json(path_or_text: str) -> HardNet:
    """Load a .lgn.json file (or raw JSON text) back into a HardNet."""
    if "\n" in path_or_text or path_or_text.lstrip().startswith("{"):
        doc = json.loads(path_or_text)
    else:
        with open(path_or_text) as f:
            doc = json.load(f)
    return HardNet.from_json_dict(doc)
