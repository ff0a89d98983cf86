"""Trainable convolutional logic gate networks.

Train with relaxed gate mixtures, discretize to a hard gate DAG, simplify,
run bit-parallel inference, and export netlists or structural Verilog.
"""

__version__ = "0.1.0"

from .gates import GateDistribution, residual_init, gaussian_init  # noqa: F401
from .model import ModelSpec, build_logictreenet, build_network, count_gates  # noqa: F401
from .discrete import HardNet, discretize, eval_discrete, simplify  # noqa: F401
from .bitsim import PackedBatch, pack_inputs, eval_packed, bench  # noqa: F401
from .export import build_adder_tree, emit_verilog, emit_netlist_json  # noqa: F401
from .train import TrainConfig, fit, softmax_cross_entropy, AdamW  # noqa: F401
