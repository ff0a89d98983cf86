"""Generated toy tasks for convergence checks and ablations.

These need no external data: a 2-bit XOR table and a 3-class motif-detection
task on small binary images (fixed shapes stamped at random positions under
bit-flip noise), which a shallow tree-convolution net should solve nearly
perfectly and which spatial-blind models find hard.
"""

from __future__ import annotations

import numpy as np

from .model import ConvSpec, ModelSpec, RandomSpec, custom_spec

XOR_INPUTS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.uint8)
XOR_LABELS = np.array([0, 1, 1, 0], dtype=np.int64)


def xor_task():
    """The full 4-pattern XOR truth table as a 2-plane image set."""
    return XOR_INPUTS.reshape(4, 2, 1, 1), XOR_LABELS


def xor_spec(tau: float = 1.0) -> ModelSpec:
    """Two random gate layers (8 nodes) over the 2 input bits, 2 classes."""
    return custom_spec((2, 1, 1), [RandomSpec(4), RandomSpec(4)],
                       tau=tau, classes=2, batch_size=4,
                       dataset="xor", size_tag="toy")


MOTIFS = {
    0: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8),  # plus
    1: np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=np.uint8),  # diagonal cross
    2: np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=np.uint8),  # ring
}


def pattern_task(n: int, seed: int = 0, size: int = 8, noise_bits: int = 2):
    """3-class motif images: one 3x3 motif per image at a random position,
    with ``noise_bits`` random pixels flipped outside the motif box."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=n).astype(np.int64)
    images = np.zeros((n, 1, size, size), dtype=np.uint8)
    top = rng.integers(0, size - 2, size=n)
    left = rng.integers(0, size - 2, size=n)
    for i in range(n):
        images[i, 0, top[i]:top[i] + 3, left[i]:left[i] + 3] = MOTIFS[int(labels[i])]
        for _ in range(noise_bits):
            r, c = rng.integers(0, size, size=2)
            if not (top[i] <= r < top[i] + 3 and left[i] <= c < left[i] + 3):
                images[i, 0, r, c] ^= 1
    return images, labels


def pattern_spec(kernels: int = 64, rand_width: int = 576, tau: float = 5.0,
                 depth: int = 2, size: int = 8) -> ModelSpec:
    """Single tree-conv block (depth ``depth``, padded 3x3) + pool + one
    random layer + 3-class group sum."""
    return custom_spec((1, size, size), [
        ConvSpec(kernels, 3, 3, depth=depth, padding=1),
        RandomSpec(rand_width, class_major=True),
    ], tau=tau, classes=3, batch_size=64,
        dataset="patterns", size_tag="toy", learning_rate=0.05)


def glyph_task(n: int, seed: int = 0, size: int = 16, classes: int = 10,
               noise_bits: int = 6):
    """10-class version for deep-model ablations: fixed random 4x4 glyph per
    class stamped at a random position on a ``size`` x ``size`` canvas, with
    background bit flips. Glyph shapes are process-independent constants."""
    shape_rng = np.random.default_rng(999)
    glyphs = (shape_rng.random((classes, 4, 4)) < 0.5).astype(np.uint8)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n).astype(np.int64)
    images = np.zeros((n, 1, size, size), dtype=np.uint8)
    top = rng.integers(0, size - 3, size=n)
    left = rng.integers(0, size - 3, size=n)
    for i in range(n):
        images[i, 0, top[i]:top[i] + 4, left[i]:left[i] + 4] = glyphs[labels[i]]
        for _ in range(noise_bits):
            r, c = rng.integers(0, size, size=2)
            if not (top[i] <= r < top[i] + 4 and left[i] <= c < left[i] + 4):
                images[i, 0, r, c] ^= 1
    return images, labels


def deep_glyph_spec(k: int = 12, tau: float = 8.0, size: int = 16) -> ModelSpec:
    """A 15-trainable-layer stack for the glyph task: 4 depth-3 conv blocks
    (12 gate layers) plus 3 random layers. Deep enough that initialization
    decides whether training gets off the ground."""
    return custom_spec((1, size, size), [
        ConvSpec(k, 3, 3, depth=3, padding=1),
        ConvSpec(2 * k, 3, 3, depth=3, padding=1),
        ConvSpec(4 * k, 3, 3, depth=3, padding=1),
        ConvSpec(8 * k, 3, 3, depth=3, padding=1),
        RandomSpec(40 * k),
        RandomSpec(40 * k),
        RandomSpec(20 * k, class_major=True),
    ], tau=tau, classes=10, batch_size=64,
        dataset="glyphs", size_tag="deep", learning_rate=0.05)
