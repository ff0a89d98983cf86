"""The 16 two-input logic gates, their real-valued relaxations, and learnable mixtures.

A gate index ``i`` in ``0..15`` packs the truth table as
``i = g(1,1)*1 + g(1,0)*2 + g(0,1)*4 + g(0,0)*8``, so 0 is the constant
FALSE gate, 1 is AND, 3 passes through the first input, 5 passes the
second, 6 is XOR, 7 is OR, and 15 is TRUE.

The relaxation of gate ``i`` is its multilinear extension: the expectation
of the boolean output under independent Bernoulli(a), Bernoulli(b) inputs.
A learnable node mixes all 16 relaxed gates with softmax weights over a
16-dimensional logit vector; the mixture stays inside [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NUM_GATES = 16

# Named indices for the gates that come up by name elsewhere.
G_FALSE = 0
G_AND = 1
G_A_AND_NOT_B = 2
G_A = 3
G_B_AND_NOT_A = 4
G_B = 5
G_XOR = 6
G_OR = 7
G_NOR = 8
G_XNOR = 9
G_NOT_B = 10
G_B_IMPLIES_A = 11
G_NOT_A = 12
G_A_IMPLIES_B = 13
G_NAND = 14
G_TRUE = 15

GATE_NAMES = (
    "FALSE", "AND", "A&~B", "A", "B&~A", "B", "XOR", "OR",
    "NOR", "XNOR", "~B", "B=>A", "~A", "A=>B", "NAND", "TRUE",
)

# TRUTH[i, 2*a + b] = output of gate i on boolean inputs (a, b).
TRUTH = np.array(
    [[(i >> 3) & 1, (i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(NUM_GATES)],
    dtype=np.int64,
)
TRUTH_F = TRUTH.astype(np.float64)

# SWAPPED[i] computes g_i with its inputs exchanged: bits for (1,0) and (0,1) trade places.
SWAPPED = np.array(
    [(i & 0b1001) | ((i & 0b0010) << 1) | ((i & 0b0100) >> 1) for i in range(NUM_GATES)],
    dtype=np.int64,
)


def truth_table(gate: int, a: int, b: int) -> int:
    """Boolean output of gate ``gate`` on bits ``a``, ``b``."""
    if not 0 <= gate < NUM_GATES:
        raise ValueError(f"gate index {gate} outside 0..15")
    return int(TRUTH[gate, 2 * (a & 1) + (b & 1)])


def _check_unit_interval(x, name: str, tol: float = 1e-9) -> None:
    x = np.asarray(x)
    if np.any(x < -tol) or np.any(x > 1 + tol):
        raise ValueError(f"{name} outside [0, 1]: range [{x.min()}, {x.max()}]")


def relaxed_gate(gate: int, a, b):
    """Multilinear extension of gate ``gate`` evaluated at real a, b in [0, 1].

    Agrees with the truth table on {0,1}^2 and equals
    sum_{u,v} tt(u,v) * a^u (1-a)^(1-u) * b^v (1-b)^(1-v).
    """
    _check_unit_interval(a, "a")
    _check_unit_interval(b, "b")
    t = TRUTH_F[gate]
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = (
        t[0] * (1 - a) * (1 - b)
        + t[1] * (1 - a) * b
        + t[2] * a * (1 - b)
        + t[3] * a * b
    )
    return out if out.ndim else float(out)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    z = np.asarray(z)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class GateDistribution:
    """A learnable choice of gate: 16 logits, softmaxed into mixture weights.

    ``hard`` pins the distribution to an exact one-hot on that gate index,
    bypassing softmax; used for discretization-equivalence checks where the
    mixture must reproduce a single gate bit-for-bit.
    """

    z: np.ndarray
    hard: int | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64).reshape(NUM_GATES)
        object.__setattr__(self, "z", z)
        if self.hard is not None and not 0 <= self.hard < NUM_GATES:
            raise ValueError(f"hard gate index {self.hard} outside 0..15")

    def probs(self) -> np.ndarray:
        if self.hard is not None:
            p = np.zeros(NUM_GATES)
            p[self.hard] = 1.0
            return p
        return softmax(self.z)

    def argmax_gate(self) -> int:
        """Most probable gate; ties resolve to the lowest index."""
        if self.hard is not None:
            return self.hard
        return int(np.argmax(self.probs()))


def one_hot(gate: int) -> GateDistribution:
    """Distribution concentrated exactly on one gate."""
    return GateDistribution(np.zeros(NUM_GATES), hard=gate)


def residual_init(strength: float = 5.0) -> GateDistribution:
    """Bias the node toward the pass-through-A gate (logit ``strength`` on index 3).

    At strength 5 the pass-through probability is e^5/(e^5+15) ~ 0.9082, so a
    fresh network forwards its inputs almost unchanged and gradients survive
    depth; strength 0 degenerates to the uniform mixture.
    """
    if strength < 0:
        raise ValueError("strength must be nonnegative")
    z = np.zeros(NUM_GATES)
    z[G_A] = strength
    return GateDistribution(z)


def gaussian_init(rng: np.random.Generator) -> GateDistribution:
    """Logits drawn i.i.d. from the standard normal."""
    return GateDistribution(rng.standard_normal(NUM_GATES))


def mixed_gate_forward(dist: GateDistribution, a: float, b: float) -> float:
    """Softmax-weighted mixture of all 16 relaxed gates at (a, b)."""
    _check_unit_interval(a, "a")
    _check_unit_interval(b, "b")
    q = dist.probs() @ TRUTH_F  # probability each truth-table corner outputs 1
    return float(
        q[0] * (1 - a) * (1 - b) + q[1] * (1 - a) * b + q[2] * a * (1 - b) + q[3] * a * b
    )


def mixed_gate_backward(
    dist: GateDistribution, a: float, b: float, upstream: float = 1.0
) -> tuple[np.ndarray, float, float]:
    """Analytic gradients of the mixture output.

    Returns (dz, da, db) where dz[i] = upstream * p_i * (g_i(a,b) - f), the
    softmax chain rule, and da/db differentiate the multilinear form.
    For a ``hard`` distribution the logits are out of play and dz is zero.
    """
    p = dist.probs()
    g = (
        TRUTH_F[:, 0] * (1 - a) * (1 - b)
        + TRUTH_F[:, 1] * (1 - a) * b
        + TRUTH_F[:, 2] * a * (1 - b)
        + TRUTH_F[:, 3] * a * b
    )
    f = float(p @ g)
    if dist.hard is not None:
        dz = np.zeros(NUM_GATES)
    else:
        dz = upstream * p * (g - f)
    q = p @ TRUTH_F
    da = upstream * ((q[2] - q[0]) * (1 - b) + (q[3] - q[1]) * b)
    db = upstream * ((q[1] - q[0]) * (1 - a) + (q[3] - q[2]) * a)
    return dz, float(da), float(db)


# ---------------------------------------------------------------------------
# Helpers shared with the discrete/synthesis side.


def gate_output_bits(gate: int) -> tuple[int, int, int, int]:
    """Truth table of ``gate`` as (g(0,0), g(0,1), g(1,0), g(1,1))."""
    return tuple(int(v) for v in TRUTH[gate])


def restrict_gate(gate: int, which: int, value: int) -> tuple[str, int]:
    """Partially evaluate a gate with one input pinned to a constant.

    ``which`` is 0 to pin input a, 1 to pin input b. Returns one of
    ('const', 0/1), ('pass', other-input), ('not', other-input) describing
    the residual unary function; the int names the surviving input (0=a, 1=b).
    """
    t = TRUTH[gate]
    if which == 0:  # pin a=value, residual function of b
        lo, hi = int(t[2 * value + 0]), int(t[2 * value + 1])
        other = 1
    else:  # pin b=value, residual function of a
        lo, hi = int(t[0 * 2 + value]), int(t[1 * 2 + value])
        other = 0
    if lo == hi:
        return ("const", lo)
    if (lo, hi) == (0, 1):
        return ("pass", other)
    return ("not", other)


def restrict_gate_equal_inputs(gate: int) -> tuple[str, int]:
    """Residual unary function when both inputs are the same wire x.

    Returns ('const', 0/1), ('pass', 0) for x, or ('not', 0) for NOT x.
    """
    lo, hi = int(TRUTH[gate, 0]), int(TRUTH[gate, 3])
    if lo == hi:
        return ("const", lo)
    if (lo, hi) == (0, 1):
        return ("pass", 0)
    return ("not", 0)
