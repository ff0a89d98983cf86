"""Shared oracles and fixtures.

The reference implementations here are intentionally independent of the
library code paths they check: hand-written closed forms for the 16 gate
relaxations, per-placement scalar tree walks, central finite differences,
and a per-node pure-Python net evaluator.
"""

import os

import numpy as np
import pytest

from logictree.gates import GateDistribution, mixed_gate_forward

# The 16 relaxations written out by hand (polynomial forms), indexed by the
# truth-table encoding. Used only as an oracle.
REF_FORMULAS = [
    lambda a, b: 0.0 * a,
    lambda a, b: a * b,
    lambda a, b: a - a * b,
    lambda a, b: a,
    lambda a, b: b - a * b,
    lambda a, b: b,
    lambda a, b: a + b - 2 * a * b,
    lambda a, b: a + b - a * b,
    lambda a, b: 1 - (a + b - a * b),
    lambda a, b: 1 - (a + b - 2 * a * b),
    lambda a, b: 1 - b,
    lambda a, b: 1 - b + a * b,
    lambda a, b: 1 - a,
    lambda a, b: 1 - a + a * b,
    lambda a, b: 1 - a * b,
    lambda a, b: 1.0 + 0.0 * a,
]


def central_diff(f, x0, h=1e-5):
    """Central finite-difference gradient of scalar f at vector x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(got, want, floor=1e-8):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = np.maximum(np.abs(want), floor)
    return np.max(np.abs(got - want) / scale)


def tree_conv_reference(conn, dists, x, padding):
    """Scalar per-placement evaluation of a gate-tree convolution.

    Walks every placement independently with mixed_gate_forward; no shared
    code with TreeConvLayer.
    """
    batch, m, h, w = x.shape
    oh = h - conn.s_h + 1 + 2 * padding
    ow = w - conn.s_w + 1 + 2 * padding
    xp = np.zeros((batch, m, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + w] = x
    n = conn.kernels
    out = np.zeros((batch, n, oh, ow))
    for s in range(batch):
        for k in range(n):
            for i in range(oh):
                for j in range(ow):
                    vals = [
                        xp[s, conn.chan[k, l], i + conn.row[k, l], j + conn.col[k, l]]
                        for l in range(conn.leaves)
                    ]
                    node = 0
                    while len(vals) > 1:
                        nxt = []
                        for t in range(0, len(vals), 2):
                            nxt.append(
                                mixed_gate_forward(dists[k][node], vals[t], vals[t + 1])
                            )
                            node += 1
                        vals = nxt
                    out[s, k, i, j] = vals[0]
    return out


def dists_from_layer(layer):
    """Per-kernel GateDistribution lists mirroring a TreeConvLayer's logits."""
    n, nodes, _ = layer.z.shape
    return [
        [GateDistribution(layer.z[k, t].astype(np.float64)) for t in range(nodes)]
        for k in range(n)
    ]


def eval_net_python(net, bits):
    """Per-node pure-Python evaluation of a HardNet, one sample.

    Returns (class scores, all wire values). Independent of the numpy
    evaluators in logictree.discrete and logictree.bitsim.
    """
    from logictree.gates import truth_table

    wires = [0, 1] + [int(v) for v in bits]
    assert len(bits) == net.n_inputs
    for gate, ra, rb in zip(net.gate, net.ref_a, net.ref_b):
        wires.append(truth_table(int(gate), wires[int(ra)], wires[int(rb)]))
    scores = [int(sum(wires[w] for w in group)) for group in net.outputs]
    return scores, wires


def mnist_dir():
    """Directory expected to hold the MNIST IDX files, or None."""
    root = os.environ.get("LOGICTREE_DATA", os.path.expanduser("~/.cache/logictree"))
    path = os.path.join(root, "mnist")
    needed = [
        "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte",
    ]
    if all(os.path.exists(os.path.join(path, f)) for f in needed):
        return path
    return None


requires_mnist = pytest.mark.skipif(
    mnist_dir() is None,
    reason="MNIST IDX files not present in the data cache (run `logictree fetch mnist`)",
)
