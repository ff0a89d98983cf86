"""Differentiable layers: tree convolution, or-pooling, random wiring, group-sum head.

All layers share one parameterization: each learnable node carries 16 logits
mixing the relaxed gates (see ``gates``). Activations live in [0, 1]; with
hard one-hot mixtures and boolean inputs every layer reproduces its discrete
boolean semantics exactly, which is what the discretization tests pin down.

Layout convention: dense arrays, batch outermost; feature maps are
(batch, channels, height, width).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gates import NUM_GATES, TRUTH_F, softmax


def node_probs(z: np.ndarray, hard: np.ndarray | None = None) -> np.ndarray:
    """Mixture weights for an array of nodes, shape (..., 16).

    ``hard`` (same leading shape, int gate indices) replaces softmax with
    exact one-hot rows so boolean evaluation is bit-exact.
    """
    if hard is not None:
        p = np.zeros(hard.shape + (NUM_GATES,), dtype=z.dtype)
        np.put_along_axis(p, hard[..., None].astype(np.int64), 1.0, axis=-1)
        return p
    return softmax(z, axis=-1)


def corner_weights(p: np.ndarray) -> np.ndarray:
    """Probability that a node outputs 1 at each input corner (00, 01, 10, 11)."""
    return p @ TRUTH_F.astype(p.dtype)


def mix_coeffs(q, extra_axes: int = 0):
    """Multilinear coefficients (c0, c1, c2, c3) of f = c0 + c1 b + c2 a + c3 ab.

    Returned as contiguous arrays with ``extra_axes`` trailing singleton axes
    so they broadcast cheaply against batched activations.
    """
    shape = q.shape[:-1] + (1,) * extra_axes
    c0 = np.ascontiguousarray(q[..., 0]).reshape(shape)
    c1 = np.ascontiguousarray(q[..., 1] - q[..., 0]).reshape(shape)
    c2 = np.ascontiguousarray(q[..., 2] - q[..., 0]).reshape(shape)
    c3 = np.ascontiguousarray(
        q[..., 3] - q[..., 2] - q[..., 1] + q[..., 0]
    ).reshape(shape)
    return c0, c1, c2, c3


def _mix_forward(coeffs, a, b):
    c0, c1, c2, c3 = coeffs
    t = b * c3
    t += c2
    t *= a
    u = b * c1
    u += c0
    t += u
    return t


def _mix_grads(coeffs, a, b, up):
    c0, c1, c2, c3 = coeffs
    da = b * c3
    da += c2
    da *= up
    db = a * c3
    db += c1
    db *= up
    return da, db


def _corner_grad_sums(a, b, up, reduce_axes):
    # Accumulated upstream mass at each corner basis function; these are the
    # per-node gradients wrt the corner weights q.
    t = up * a
    dqa = t.sum(axis=reduce_axes)           # dq2 + dq3
    t *= b
    dq3 = t.sum(axis=reduce_axes)
    np.multiply(up, b, out=t)
    dqb = t.sum(axis=reduce_axes)           # dq1 + dq3
    dq0 = up.sum(axis=reduce_axes) - dqa - dqb + dq3
    return np.stack([dq0, dqb - dq3, dqa - dq3, dq3], axis=-1)


def logits_grad_from_corner_grad(p: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """Chain corner-weight gradients through softmax back to the logits."""
    dp = dq @ TRUTH_F.T.astype(dq.dtype)
    inner = (dp * p).sum(axis=-1, keepdims=True)
    return p * (dp - inner)


def init_logits(
    shape: tuple[int, ...],
    scheme: str,
    rng: np.random.Generator,
    strength: float = 5.0,
    dtype=np.float32,
) -> np.ndarray:
    """Logit tensor of shape ``shape + (16,)`` under the named init scheme."""
    if scheme == "residual":
        z = np.zeros(shape + (NUM_GATES,), dtype=dtype)
        z[..., 3] = strength
        return z
    if scheme == "gaussian":
        return rng.standard_normal(shape + (NUM_GATES,)).astype(dtype)
    raise ValueError(f"unknown init scheme {scheme!r} (want 'residual' or 'gaussian')")


# ---------------------------------------------------------------------------
# Connections


@dataclass(frozen=True)
class ConnectionTable:
    """Fixed random wiring of tree leaves into the receptive field.

    ``chan[k, l]``, ``row[k, l]``, ``col[k, l]`` select the input channel and
    the offset inside the s_h x s_w window for leaf ``l`` of kernel ``k``.
    Immutable once sampled; training never touches it.
    """

    chan: np.ndarray
    row: np.ndarray
    col: np.ndarray
    in_channels: int
    s_h: int
    s_w: int
    depth: int
    groups: int = 1

    def __post_init__(self):
        for arr in (self.chan, self.row, self.col):
            arr.setflags(write=False)
        n, leaves = self.chan.shape
        if leaves != 2 ** self.depth:
            raise ValueError(f"{leaves} leaves inconsistent with depth {self.depth}")
        if self.chan.min() < 0 or self.chan.max() >= self.in_channels:
            raise ValueError("channel pick outside input range")
        if self.row.min() < 0 or self.row.max() >= self.s_h:
            raise ValueError("row offset outside receptive field")
        if self.col.min() < 0 or self.col.max() >= self.s_w:
            raise ValueError("column offset outside receptive field")

    @property
    def kernels(self) -> int:
        return self.chan.shape[0]

    @property
    def leaves(self) -> int:
        return self.chan.shape[1]


def sample_connections(
    rng,
    in_channels: int,
    s_h: int,
    s_w: int,
    kernels: int,
    depth: int,
    channel_restriction: int | None = 2,
    groups: int = 1,
) -> ConnectionTable:
    """Random leaf wiring, deterministic under the given seed or generator.

    Each kernel draws its leaf positions uniformly from the receptive field,
    with replacement (duplicate leaves are legal). With a channel restriction
    of 2, every kernel first picks at most two distinct channels and all its
    leaves stay inside that pair, which forces spatial comparisons within a
    channel. With ``groups`` > 1, kernels are split into contiguous groups and
    group g only sees the g-th contiguous slice of input channels.
    """
    rng = np.random.default_rng(rng)
    if groups < 1 or in_channels % groups or kernels % groups:
        raise ValueError(
            f"groups={groups} must divide in_channels={in_channels} and kernels={kernels}"
        )
    leaves = 2 ** depth
    pool = in_channels // groups
    base = (np.arange(kernels) // (kernels // groups)) * pool  # group channel offset

    if channel_restriction is None or channel_restriction >= pool:
        chan = rng.integers(0, pool, size=(kernels, leaves))
    else:
        picks = min(channel_restriction, pool)
        # distinct channel pair per kernel; degrades to one channel when pool=1
        first = rng.integers(0, pool, size=kernels)
        if picks == 2 and pool > 1:
            second = (first + 1 + rng.integers(0, pool - 1, size=kernels)) % pool
        else:
            second = first
        choose = rng.integers(0, 2, size=(kernels, leaves))
        chan = np.where(choose == 0, first[:, None], second[:, None])
    chan = chan + base[:, None]
    row = rng.integers(0, s_h, size=(kernels, leaves))
    col = rng.integers(0, s_w, size=(kernels, leaves))
    return ConnectionTable(
        chan=chan.astype(np.int32),
        row=row.astype(np.int32),
        col=col.astype(np.int32),
        in_channels=in_channels,
        s_h=s_h,
        s_w=s_w,
        depth=depth,
        groups=groups,
    )


# ---------------------------------------------------------------------------
# Tree convolution


class TreeConvLayer:
    """Convolution whose kernel is a complete binary tree of learnable gates.

    A kernel of depth d reads 2^d leaves from its receptive field (selected by
    the connection table) and reduces them through 2^d - 1 mixed-gate nodes.
    Node storage is level-major: indices [0, 2^(d-1)) combine leaf pairs,
    the last index is the root. All spatial placements share the node logits.
    """

    def __init__(
        self,
        conn: ConnectionTable,
        padding: int = 0,
        init: str = "residual",
        rng: np.random.Generator | None = None,
        strength: float = 5.0,
        dtype=np.float32,
    ):
        self.conn = conn
        self.padding = padding
        self.depth = conn.depth
        self.nodes_per_kernel = 2 ** conn.depth - 1
        self.z = init_logits(
            (conn.kernels, self.nodes_per_kernel), init,
            rng or np.random.default_rng(), strength, dtype,
        )
        self.hard: np.ndarray | None = None
        self.grad_z = np.zeros_like(self.z)
        self._leaf_cache: dict = {}

    @property
    def dtype(self):
        return self.z.dtype

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        oh = h - self.conn.s_h + 1 + 2 * self.padding
        ow = w - self.conn.s_w + 1 + 2 * self.padding
        if oh <= 0 or ow <= 0:
            raise ValueError(f"receptive field {self.conn.s_h}x{self.conn.s_w} too large for {h}x{w}")
        return oh, ow

    def harden(self) -> None:
        self.hard = np.argmax(node_probs(self.z), axis=-1).astype(np.int32)

    def _probs(self) -> np.ndarray:
        return node_probs(self.z, self.hard)

    def _pad(self, x: np.ndarray) -> np.ndarray:
        p = self.padding
        if p == 0:
            return x
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Relaxed forward pass; returns (B, kernels, H', W')."""
        if x.shape[1] != self.conn.in_channels:
            raise ValueError(
                f"input has {x.shape[1]} channels, connection table expects {self.conn.in_channels}"
            )
        leaves = self.gather_all_leaves(x)
        return self.eval_tree(leaves)[0]

    def _leaf_base(self, h: int, w: int) -> np.ndarray:
        """Flat (within one padded sample) wire offset per (kernel, leaf)."""
        p = self.padding
        hp, wp = h + 2 * p, w + 2 * p
        c = self.conn
        return ((c.chan.astype(np.int64) * hp + c.row) * wp + c.col)

    def _leaf_index(self, h: int, w: int) -> np.ndarray:
        """Cached flat indices of every leaf of every placement, (n, L, H', W')."""
        key = (h, w)
        cached = self._leaf_cache.get(key)
        if cached is None:
            oh, ow = self.out_shape(h, w)
            wp = w + 2 * self.padding
            offs = np.arange(oh, dtype=np.int64)[:, None] * wp + np.arange(ow)
            cached = self._leaf_base(h, w)[:, :, None, None] + offs[None, None]
            self._leaf_cache[key] = cached
        return cached

    def gather_all_leaves(self, x: np.ndarray) -> np.ndarray:
        """Leaf values for every placement, shape (B, n, leaves, H', W')."""
        xp = self._pad(np.asarray(x, dtype=self.dtype))
        idx = self._leaf_index(x.shape[2], x.shape[3])
        return np.take(xp.reshape(x.shape[0], -1), idx, axis=1)

    def gather_leaves_at(self, x: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Leaf values at selected placements i, j of shape (B, n, ...)."""
        xp = self._pad(np.asarray(x, dtype=self.dtype))
        flat = self._placement_index(x.shape, i, j)
        batch = x.shape[0]
        plane = xp.shape[1] * xp.shape[2] * xp.shape[3]
        boffs = (np.arange(batch, dtype=np.int64) * plane).reshape(
            (-1, 1, 1) + (1,) * (i.ndim - 2)
        )
        return xp.reshape(-1)[flat + boffs]

    def _placement_index(self, x_shape, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Flat within-sample leaf indices at dynamic placements (B, n, ...)."""
        _, _, h, w = x_shape
        wp = w + 2 * self.padding
        base = self._leaf_base(h, w)  # (n, L)
        base = base.reshape((1,) + base.shape + (1,) * (i.ndim - 2))
        return base + (i[:, :, None] * wp + j[:, :, None])

    def eval_tree(self, leaves: np.ndarray, keep_levels: bool = False):
        """Reduce (B, n, leaves, ...) through the gate tree to (B, n, ...).

        Returns (root_values, level_inputs) where level_inputs[l] is the value
        array entering level l (only populated when keep_levels is set).
        """
        q = corner_weights(self._probs())  # (n, nodes, 4)
        v = leaves
        saved = []
        offset = 0
        extra = leaves.ndim - 3  # trailing spatial axes
        for level in range(self.depth):
            width = 2 ** (self.depth - 1 - level)
            if keep_levels:
                saved.append(v)
            a = v[:, :, 0::2]
            b = v[:, :, 1::2]
            coeffs = mix_coeffs(q[:, offset:offset + width], extra_axes=extra)
            v = _mix_forward(coeffs, a, b)
            offset += width
        return v[:, :, 0], saved

    def backward_tree(self, leaves: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Backprop upstream (B, n, ...) through the tree at the given leaves.

        Accumulates node logit gradients into ``grad_z`` (summed over every
        placement, matching parameter sharing) and returns leaf gradients of
        the same shape as ``leaves``.
        """
        p = self._probs()
        q = corner_weights(p)
        _, saved = self.eval_tree(leaves, keep_levels=True)
        extra = leaves.ndim - 3
        reduce_axes = (0,) + tuple(range(3, 3 + extra))
        dq_levels = []
        g = upstream[:, :, None]
        offset = self.nodes_per_kernel
        for level in reversed(range(self.depth)):
            width = 2 ** (self.depth - 1 - level)
            offset -= width
            v = saved[level]
            a = v[:, :, 0::2]
            b = v[:, :, 1::2]
            coeffs = mix_coeffs(q[:, offset:offset + width], extra_axes=extra)
            dq_levels.append(_corner_grad_sums(a, b, g, reduce_axes))
            da, db = _mix_grads(coeffs, a, b, g)
            g = np.empty_like(v)
            g[:, :, 0::2] = da
            g[:, :, 1::2] = db
        dq = np.concatenate(list(reversed(dq_levels)), axis=1)
        if self.hard is None:
            self.grad_z += logits_grad_from_corner_grad(p, dq.astype(p.dtype))
        return g

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Full backward over all placements (recomputes the forward tree)."""
        leaves = self.gather_all_leaves(x)
        gleaf = self.backward_tree(leaves, upstream)
        idx = self._leaf_index(x.shape[2], x.shape[3])[None]
        return self._scatter_leaf_grads(x.shape, gleaf, idx)

    def _scatter_leaf_grads(self, x_shape, gleaf, flat_idx) -> np.ndarray:
        """Accumulate leaf gradients back onto the (unpadded) input.

        ``flat_idx`` holds within-sample flat indices into the padded map,
        broadcastable to ``gleaf`` over (B, n, leaves, ...).
        """
        batch, m, h, w = x_shape
        p = self.padding
        hp, wp = h + 2 * p, w + 2 * p
        plane = m * hp * wp
        dxp_flat = np.zeros(batch * plane, dtype=gleaf.dtype)
        boffs = (np.arange(batch, dtype=np.int64) * plane).reshape(
            (-1, 1) + (1,) * (gleaf.ndim - 3)
        )
        for l in range(self.conn.leaves):  # per-leaf bincount bounds the temps
            sel = flat_idx[:, :, l] if flat_idx.shape[0] > 1 else flat_idx[0, :, l][None]
            flat = np.broadcast_to(boffs + sel, gleaf[:, :, l].shape)
            dxp_flat += np.bincount(
                flat.ravel(), weights=gleaf[:, :, l].ravel(), minlength=dxp_flat.size
            ).astype(gleaf.dtype)
        dxp = dxp_flat.reshape(batch, m, hp, wp)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp

    # Trainer plumbing -------------------------------------------------
    def params(self):
        return [self.z]

    def grads(self):
        return [self.grad_z]

    def zero_grad(self):
        self.grad_z[...] = 0


# ---------------------------------------------------------------------------
# Or pooling


class OrPoolLayer:
    """2x2/stride-2 pooling with the max t-conorm (logical or on booleans).

    Forward keeps only the window max and its index; backward routes the
    upstream value to that index (ties go to the first position in row-major
    window order) and zeroes the rest.
    """

    window = (2, 2)
    stride = (2, 2)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"spatial dims {h}x{w} not divisible by 2")
        win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(b, c, h // 2, w // 2, 4)
        idx = win.argmax(axis=-1).astype(np.uint8)
        out = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=-1)[..., 0]
        return out, idx

    def backward(self, idx: np.ndarray, upstream: np.ndarray, in_shape) -> np.ndarray:
        b, c, h, w = in_shape
        if idx.shape != upstream.shape:
            raise ValueError(f"stale pooling indices: {idx.shape} vs {upstream.shape}")
        dx = np.zeros((b, c, h // 2, 2, w // 2, 2), dtype=upstream.dtype)
        bb, cc, ii, jj = np.ogrid[0:b, 0:c, 0:h // 2, 0:w // 2]
        dx[bb, cc, ii, idx >> 1, jj, idx & 1] = upstream
        return dx.reshape(b, c, h, w)

    def params(self):
        return []

    def grads(self):
        return []

    def zero_grad(self):
        pass


def argmax_placements(idx: np.ndarray):
    """Map pooling argmax indices to pre-pool placement coordinates."""
    hh, ww = np.meshgrid(
        np.arange(idx.shape[2]), np.arange(idx.shape[3]), indexing="ij"
    )
    i = 2 * hh[None, None] + (idx >> 1)
    j = 2 * ww[None, None] + (idx & 1)
    return i.astype(np.int64), j.astype(np.int64)


class ConvBlock:
    """Tree convolution fused with or-pooling.

    Forward stores only the pooled activations and the pooling argmax; the
    backward pass regathers leaves at the winning placements, recomputes the
    tree there, and backpropagates along that path alone. Functionally equal
    to TreeConvLayer.backward composed with OrPoolLayer.backward, but it never
    materializes the losing placements.
    """

    def __init__(self, tree: TreeConvLayer):
        self.tree = tree
        self.pool = OrPoolLayer()

    def forward(self, x: np.ndarray):
        y = self.tree.forward(x)
        out, idx = self.pool.forward(y)
        return out, (x, idx, y.shape)

    def backward(self, cache, upstream: np.ndarray) -> np.ndarray:
        x, idx, y_shape = cache
        i, j = argmax_placements(idx)
        leaves = self.tree.gather_leaves_at(x, i, j)
        gleaf = self.tree.backward_tree(leaves, upstream)
        flat = self.tree._placement_index(x.shape, i, j)
        return self.tree._scatter_leaf_grads(x.shape, gleaf, flat)

    def out_shape(self, h, w):
        oh, ow = self.tree.out_shape(h, w)
        return oh // 2, ow // 2

    def params(self):
        return self.tree.params()

    def grads(self):
        return self.tree.grads()

    def zero_grad(self):
        self.tree.zero_grad()


# ---------------------------------------------------------------------------
# Random (non-spatial) logic layer


class RandomLayer:
    """Flat layer of mixed gates over a fixed random pair of inputs per node."""

    def __init__(
        self,
        in_size: int,
        out_size: int,
        rng: np.random.Generator | None = None,
        init: str = "residual",
        strength: float = 5.0,
        dtype=np.float32,
        groups: int = 1,
        class_major: int = 0,
    ):
        """``groups`` > 1 restricts node inputs to the matching contiguous
        slice of the input. With ``class_major`` = C > 0 the output is laid out
        as C contiguous class blocks and the group of a node cycles within its
        block, so every class still draws on all groups.
        """
        rng = np.random.default_rng(rng)
        if groups > 1 and (in_size % groups or out_size % groups):
            raise ValueError(f"groups={groups} must divide sizes {in_size}->{out_size}")
        self.in_size = in_size
        self.out_size = out_size
        if groups == 1:
            self.idx_a = rng.integers(0, in_size, size=out_size)
            self.idx_b = rng.integers(0, in_size, size=out_size)
        else:
            slice_size = in_size // groups
            if class_major:
                per_class = out_size // class_major
                g = (np.arange(out_size) % per_class) % groups
            else:
                g = np.arange(out_size) // (out_size // groups)
            lo = g * slice_size
            self.idx_a = lo + rng.integers(0, slice_size, size=out_size)
            self.idx_b = lo + rng.integers(0, slice_size, size=out_size)
        self.idx_a = self.idx_a.astype(np.int64)
        self.idx_b = self.idx_b.astype(np.int64)
        self.idx_a.setflags(write=False)
        self.idx_b.setflags(write=False)
        self.z = init_logits((out_size,), init, rng, strength, dtype)
        self.hard: np.ndarray | None = None
        self.grad_z = np.zeros_like(self.z)
        # segment-sum plan for scattering gradients back onto the inputs
        both = np.concatenate([self.idx_a, self.idx_b])
        self._order = np.argsort(both, kind="stable")
        sorted_idx = both[self._order]
        self._targets, starts = np.unique(sorted_idx, return_index=True)
        self._starts = starts

    def harden(self) -> None:
        self.hard = np.argmax(node_probs(self.z), axis=-1).astype(np.int32)

    def _probs(self):
        return node_probs(self.z, self.hard)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.in_size:
            raise ValueError(f"input width {x.shape[1]} != {self.in_size}")
        x = np.asarray(x, dtype=self.z.dtype)
        a = np.take(x, self.idx_a, axis=1)
        b = np.take(x, self.idx_b, axis=1)
        coeffs = mix_coeffs(corner_weights(self._probs()))
        return _mix_forward(coeffs, a, b)

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.z.dtype)
        a = np.take(x, self.idx_a, axis=1)
        b = np.take(x, self.idx_b, axis=1)
        p = self._probs()
        coeffs = mix_coeffs(corner_weights(p))
        dq = _corner_grad_sums(a, b, upstream, (0,))
        if self.hard is None:
            self.grad_z += logits_grad_from_corner_grad(p, dq.astype(p.dtype))
        da, db = _mix_grads(coeffs, a, b, upstream)
        # segment-sum in transposed layout: row gathers stay contiguous
        gab = np.empty((2 * self.out_size, x.shape[0]), dtype=x.dtype)
        gab[:self.out_size] = da.T
        gab[self.out_size:] = db.T
        sums = np.add.reduceat(gab.take(self._order, axis=0), self._starts, axis=0)
        dx = np.zeros((self.in_size, x.shape[0]), dtype=x.dtype)
        dx[self._targets] = sums
        return np.ascontiguousarray(dx.T)

    def params(self):
        return [self.z]

    def grads(self):
        return [self.grad_z]

    def zero_grad(self):
        self.grad_z[...] = 0


# ---------------------------------------------------------------------------
# Group-sum classification head


class GroupSumHead:
    """Counts active wires per contiguous class group, scaled by 1/tau."""

    def __init__(self, classes: int = 10, tau: float = 1.0):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.classes = classes
        self.tau = tau

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, n = x.shape
        if n % self.classes:
            raise ValueError(f"layer width {n} not divisible by {self.classes} classes")
        return x.reshape(b, self.classes, n // self.classes).sum(axis=-1) / self.tau

    def backward(self, upstream: np.ndarray, in_width: int) -> np.ndarray:
        b = upstream.shape[0]
        group = in_width // self.classes
        return np.repeat(upstream / self.tau, group, axis=1).reshape(b, in_width)

    def params(self):
        return []

    def grads(self):
        return []

    def zero_grad(self):
        pass
