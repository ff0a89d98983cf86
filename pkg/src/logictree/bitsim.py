"""Bit-packed 64-lane boolean inference for hard gate networks.

Samples map to bit lanes: one uint64 word per input wire holds 64 samples,
every gate becomes a fixed two-word bitwise expression evaluated level by
level, and class scores come from per-word population counts after a bit
transpose into sample-major words. This is the throughput path; the scalar
sweep in ``discrete.eval_discrete`` is its correctness oracle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .discrete import HardNet

_U64 = np.uint64
_ALL_ONES = _U64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class PackedBatch:
    """Per input wire, one 64-lane word per 64 samples; tail lanes zero."""

    words: np.ndarray  # (n_inputs, n_words) uint64
    n_samples: int

    def __post_init__(self):
        if self.words.dtype != _U64:
            raise ValueError("packed words must be uint64")
        if self.words.shape[1] != (self.n_samples + 63) // 64:
            raise ValueError("word count inconsistent with sample count")

    @property
    def n_inputs(self) -> int:
        return self.words.shape[0]

    @property
    def n_words(self) -> int:
        return self.words.shape[1]


def pack_inputs(bits: np.ndarray) -> PackedBatch:
    """Transpose sample-major bits (batch, n_inputs) into lane-packed words."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError("expected (batch, n_inputs) bit matrix")
    n, width = bits.shape
    pad = (-n) % 64
    planes = (bits != 0).T.astype(np.uint8)  # (width, n)
    if pad:
        planes = np.concatenate(
            [planes, np.zeros((width, pad), dtype=np.uint8)], axis=1
        )
    packed = np.ascontiguousarray(np.packbits(planes, axis=1, bitorder="little"))
    return PackedBatch(words=packed.view(_U64).reshape(width, -1), n_samples=n)


def unpack_batch(batch: PackedBatch) -> np.ndarray:
    """Inverse of pack_inputs: (batch, n_inputs) uint8 bits."""
    raw = np.unpackbits(
        batch.words.reshape(batch.n_inputs, -1).view(np.uint8), axis=1,
        bitorder="little",
    )
    return raw[:, : batch.n_samples].T.copy()


def popcount_u64(words: np.ndarray) -> np.ndarray:
    """SWAR population count per uint64 word."""
    x = words.copy()
    x -= (x >> _U64(1)) & _U64(0x5555555555555555)
    x = (x & _U64(0x3333333333333333)) + ((x >> _U64(2)) & _U64(0x3333333333333333))
    x = (x + (x >> _U64(4))) & _U64(0x0F0F0F0F0F0F0F0F)
    return (x * _U64(0x0101010101010101)) >> _U64(56)


def _gate_masks(gate: np.ndarray):
    # one all-ones/all-zeros mask word per node and truth-table corner
    g = gate.astype(np.int64)
    def m(bit):
        return np.where(bit, _ALL_ONES, _U64(0)).astype(_U64)
    return (
        m((g >> 3) & 1),  # a=0 b=0
        m((g >> 2) & 1),  # a=0 b=1
        m((g >> 1) & 1),  # a=1 b=0
        m(g & 1),         # a=1 b=1
    )


class PackedEvaluator:
    """Reusable per-net evaluation plan: level schedule plus gate masks."""

    def __init__(self, net: HardNet):
        net.validate()
        self.net = net
        levels = net.levels()
        order = np.argsort(levels, kind="stable")
        self.level_slices = []
        if net.num_nodes:
            bounds = np.searchsorted(levels[order], np.arange(1, levels.max() + 2))
            start = 0
            for end in bounds:
                idx = order[start:end]
                if idx.size:
                    self.level_slices.append(
                        (idx, net.ref_a[idx], net.ref_b[idx], _gate_masks(net.gate[idx]))
                    )
                start = end

    def eval_words(self, input_words: np.ndarray) -> np.ndarray:
        """Evaluate one word-column block: (n_inputs, W) -> all wires (n_wires, W)."""
        net = self.net
        n_words = input_words.shape[1]
        arena = np.empty((net.num_wires, n_words), dtype=_U64)
        arena[0] = _U64(0)
        arena[1] = _ALL_ONES
        arena[2:2 + net.n_inputs] = input_words
        base = 2 + net.n_inputs
        for idx, ra, rb, (m00, m01, m10, m11) in self.level_slices:
            a = arena[ra]
            b = arena[rb]
            na = ~a
            nb = ~b
            out = (m11[:, None] & a & b) | (m10[:, None] & a & nb)
            out |= (m01[:, None] & na & b) | (m00[:, None] & na & nb)
            arena[base + idx] = out
        return arena

    def scores_from_arena(self, arena: np.ndarray, n_samples: int) -> np.ndarray:
        scores = np.empty((n_samples, self.net.classes), dtype=np.int64)
        for c, grp in enumerate(self.net.outputs):
            words = arena[grp]  # (group, W)
            bits = np.unpackbits(words.view(np.uint8).reshape(len(grp), -1),
                                 axis=1, bitorder="little")[:, :n_samples]
            # repack along the group axis: one word run per sample, then popcount
            by_sample = np.ascontiguousarray(
                np.packbits(bits.T, axis=1, bitorder="little")
            )
            pad = (-by_sample.shape[1]) % 8
            if pad:
                by_sample = np.concatenate(
                    [by_sample, np.zeros((n_samples, pad), np.uint8)], axis=1
                )
            scores[:, c] = popcount_u64(by_sample.view(_U64)).sum(axis=1)
        return scores


def eval_packed(
    net: HardNet | PackedEvaluator,
    batch: PackedBatch,
    threads: int = 1,
    words_per_chunk: int = 32,
) -> np.ndarray:
    """Per-sample integer class scores, identical to the scalar evaluator.

    Word columns are processed in chunks to bound the arena footprint;
    threads shard the chunks over a shared read-only net.
    """
    ev = net if isinstance(net, PackedEvaluator) else PackedEvaluator(net)
    if batch.n_inputs != ev.net.n_inputs:
        raise ValueError(f"batch width {batch.n_inputs} != net inputs {ev.net.n_inputs}")
    chunks = []
    for lo in range(0, batch.n_words, words_per_chunk):
        hi = min(lo + words_per_chunk, batch.n_words)
        n_in_chunk = min(batch.n_samples - lo * 64, (hi - lo) * 64)
        chunks.append((lo, hi, n_in_chunk))

    def run(chunk):
        lo, hi, n = chunk
        arena = ev.eval_words(batch.words[:, lo:hi])
        return ev.scores_from_arena(arena, n)

    if threads <= 1 or len(chunks) <= 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    return np.concatenate(parts, axis=0) if parts else np.zeros(
        (0, ev.net.classes), dtype=np.int64
    )


def bench(
    net: HardNet,
    n_samples: int,
    threads: int = 1,
    seed: int = 0,
    repeats: int = 1,
) -> dict:
    """Throughput measurement on random inputs; returns a CSV-ready report."""
    if n_samples <= 0:
        return {
            "gates": int(net.num_nodes), "samples": 0, "threads": threads,
            "seconds": 0.0, "samples_per_s": 0.0, "gates_per_s": 0.0,
        }
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(n_samples, net.n_inputs), dtype=np.uint8)
    batch = pack_inputs(bits)
    ev = PackedEvaluator(net)
    eval_packed(ev, batch, threads=threads)  # warm-up pass
    best = np.inf
    for _ in range(repeats):
        t0 = perf_counter()
        eval_packed(ev, batch, threads=threads)
        best = min(best, perf_counter() - t0)
    return {
        "gates": int(net.num_nodes),
        "samples": int(n_samples),
        "threads": int(threads),
        "seconds": float(best),
        "samples_per_s": float(n_samples / best),
        "gates_per_s": float(n_samples * net.num_nodes / best),
    }
