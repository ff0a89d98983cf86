import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logictree.layers import (
    ConnectionTable,
    ConvBlock,
    GroupSumHead,
    OrPoolLayer,
    RandomLayer,
    TreeConvLayer,
    sample_connections,
)

from conftest import central_diff, dists_from_layer, rel_err, tree_conv_reference


def make_conv(rng, m=1, s=2, n=2, d=2, padding=0, init="gaussian", dtype=np.float64,
              channel_restriction=None):
    conn = sample_connections(rng, m, s, s, n, d, channel_restriction=channel_restriction)
    return TreeConvLayer(conn, padding=padding, init=init, rng=rng, dtype=dtype)


class TestSampleConnections:
    def test_deterministic_under_seed(self):
        c1 = sample_connections(123, 8, 3, 3, 16, 3)
        c2 = sample_connections(123, 8, 3, 3, 16, 3)
        assert np.array_equal(c1.chan, c2.chan)
        assert np.array_equal(c1.row, c2.row)
        assert np.array_equal(c1.col, c2.col)

    def test_channel_restriction(self):
        c = sample_connections(0, 16, 3, 3, 64, 3, channel_restriction=2)
        for k in range(c.kernels):
            assert len(set(c.chan[k])) <= 2

    def test_restriction_degrades_with_one_channel(self):
        c = sample_connections(0, 1, 5, 5, 8, 3, channel_restriction=2)
        assert np.all(c.chan == 0)

    def test_groups_partition(self):
        c = sample_connections(0, 64, 3, 3, 128, 3, groups=4)
        per_out = 128 // 4
        per_in = 64 // 4
        for k in range(128):
            g = k // per_out
            assert np.all(c.chan[k] // per_in == g)

    def test_group_two_stays_inside_its_slice(self):
        c = sample_connections(5, 64, 3, 3, 128, 3, groups=4)
        block = c.chan[2 * 32:3 * 32]
        assert block.min() >= 32 and block.max() < 48

    def test_bad_groups_rejected(self):
        with pytest.raises(ValueError):
            sample_connections(0, 10, 3, 3, 8, 2, groups=4)

    def test_immutable(self):
        c = sample_connections(0, 4, 3, 3, 4, 2)
        with pytest.raises(ValueError):
            c.chan[0, 0] = 1


class TestTreeConvForward:
    def test_all_and_tree_with_a_zero(self):
        # single kernel, d=2, leaves are the 4 cells of a 2x2 window
        conn = ConnectionTable(
            chan=np.zeros((1, 4), dtype=np.int32),
            row=np.array([[0, 0, 1, 1]], dtype=np.int32),
            col=np.array([[0, 1, 0, 1]], dtype=np.int32),
            in_channels=1, s_h=2, s_w=2, depth=2,
        )
        layer = TreeConvLayer(conn, dtype=np.float64)
        layer.hard = np.full((1, 3), 1, dtype=np.int32)  # every node AND
        x = np.array([[[[1.0, 1.0], [1.0, 0.0]]]])
        assert layer.forward(x)[0, 0, 0, 0] == 0.0

    def test_passthrough_tree_selects_first_leaf(self):
        rng = np.random.default_rng(0)
        layer = make_conv(rng, m=2, s=2, n=3, d=2)
        layer.hard = np.full((3, 3), 3, dtype=np.int32)  # pass-through A
        x = rng.random((2, 2, 5, 5))
        y = layer.forward(x)
        c = layer.conn
        for k in range(3):
            want = x[:, c.chan[k, 0], c.row[k, 0]:c.row[k, 0] + 4, c.col[k, 0]:c.col[k, 0] + 4]
            assert np.array_equal(y[:, k], want)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(5)
        layer = make_conv(rng, m=1, s=2, n=2, d=2)
        x = rng.random((2, 1, 4, 4))
        want = tree_conv_reference(layer.conn, dists_from_layer(layer), x, padding=0)
        got = layer.forward(x)
        assert np.allclose(got, want, atol=1e-12)

    def test_matches_scalar_reference_padded_d3(self):
        rng = np.random.default_rng(6)
        layer = make_conv(rng, m=3, s=3, n=4, d=3, padding=1)
        x = rng.random((2, 3, 6, 6))
        want = tree_conv_reference(layer.conn, dists_from_layer(layer), x, padding=1)
        got = layer.forward(x)
        assert got.shape == (2, 4, 6, 6)
        assert np.allclose(got, want, atol=1e-12)

    def test_channel_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        layer = make_conv(rng, m=2)
        with pytest.raises(ValueError):
            layer.forward(np.zeros((1, 3, 4, 4)))


class TestTreeConvBackward:
    def test_passthrough_scatters_upstream_to_first_leaf(self):
        conn = ConnectionTable(
            chan=np.zeros((1, 4), dtype=np.int32),
            row=np.array([[0, 0, 1, 1]], dtype=np.int32),
            col=np.array([[0, 1, 0, 1]], dtype=np.int32),
            in_channels=1, s_h=2, s_w=2, depth=2,
        )
        layer = TreeConvLayer(conn, init="residual", strength=1e9, dtype=np.float64)
        x = np.random.default_rng(0).random((1, 1, 3, 3))
        up = np.ones((1, 1, 2, 2))
        dx = layer.backward(x, up)
        want = np.zeros((1, 1, 3, 3))
        want[0, 0, :2, :2] = 1.0  # leaf 1 sits at window offset (0, 0)
        assert np.allclose(dx, want, atol=1e-6)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        layer = make_conv(rng, m=2, s=2, n=2, d=2)
        x = rng.uniform(0.05, 0.95, size=(1, 2, 3, 3))
        up = rng.standard_normal((1, 2, 2, 2))

        layer.zero_grad()
        dx = layer.backward(x, up)

        def loss_wrt_z(zflat):
            probe = make_conv(np.random.default_rng(9), m=2, s=2, n=2, d=2)
            probe.z = zflat.reshape(layer.z.shape)
            return float((probe.forward(x) * up).sum())

        fd_z = central_diff(loss_wrt_z, layer.z.ravel()).reshape(layer.z.shape)
        assert rel_err(layer.grad_z, fd_z, floor=1e-5) <= 1e-5

        def loss_wrt_x(xflat):
            return float((layer.forward(xflat.reshape(x.shape)) * up).sum())

        fd_x = central_diff(loss_wrt_x, x.ravel()).reshape(x.shape)
        assert rel_err(dx, fd_x, floor=1e-5) <= 1e-5

    def test_shared_kernel_grad_is_sum_of_placements(self):
        rng = np.random.default_rng(11)
        layer = make_conv(rng, m=1, s=2, n=1, d=2)
        x = rng.uniform(0, 1, size=(1, 1, 2, 3))  # two placements
        up = rng.standard_normal((1, 1, 1, 2))

        layer.zero_grad()
        layer.backward(x, up)
        total = layer.grad_z.copy()

        acc = np.zeros_like(total)
        for j in range(2):
            layer.zero_grad()
            mask = np.zeros_like(up)
            mask[..., j] = up[..., j]
            layer.backward(x, mask)
            acc += layer.grad_z
        assert np.allclose(total, acc, atol=1e-12)


class TestOrPool:
    def test_window_max_and_index(self):
        x = np.array([[[[0.2, 0.9], [0.4, 0.1]]]])
        out, idx = OrPoolLayer().forward(x)
        assert out[0, 0, 0, 0] == 0.9
        assert idx[0, 0, 0, 0] == 1

    def test_boolean_or_exhaustive(self):
        pool = OrPoolLayer()
        for pattern in range(16):
            bits = [(pattern >> i) & 1 for i in range(4)]
            x = np.array([[[[bits[0], bits[1]], [bits[2], bits[3]]]]], dtype=float)
            out, _ = pool.forward(x)
            assert out[0, 0, 0, 0] == float(any(bits))

    def test_backward_routes_to_argmax(self):
        x = np.array([[[[0.2, 0.3], [0.1, 0.9]]]])
        pool = OrPoolLayer()
        _, idx = pool.forward(x)
        dx = pool.backward(idx, np.full((1, 1, 1, 1), 1.0), x.shape)
        assert np.array_equal(dx[0, 0], [[0, 0], [0, 1]])

    def test_tie_routes_to_first(self):
        x = np.array([[[[0.5, 0.5], [0.3, 0.1]]]])
        pool = OrPoolLayer()
        _, idx = pool.forward(x)
        assert idx[0, 0, 0, 0] == 0
        dx = pool.backward(idx, np.full((1, 1, 1, 1), 2.0), x.shape)
        assert np.array_equal(dx[0, 0], [[2, 0], [0, 0]])

    def test_matches_finite_differences_off_ties(self):
        rng = np.random.default_rng(3)
        x = rng.random((2, 3, 4, 4))
        up = rng.standard_normal((2, 3, 2, 2))
        pool = OrPoolLayer()
        _, idx = pool.forward(x)
        dx = pool.backward(idx, up, x.shape)

        def loss(xf):
            out, _ = pool.forward(xf.reshape(x.shape))
            return float((out * up).sum())

        fd = central_diff(loss, x.ravel()).reshape(x.shape)
        assert rel_err(dx, fd, floor=1e-6) <= 1e-5

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError):
            OrPoolLayer().forward(np.zeros((1, 1, 3, 4)))


class TestFusedConvBlock:
    def test_matches_unfused_composition(self):
        rng = np.random.default_rng(21)
        layer = make_conv(rng, m=2, s=3, n=4, d=3, padding=1)
        block = ConvBlock(layer)
        x = rng.random((3, 2, 6, 6))
        up = rng.standard_normal((3, 4, 3, 3))

        out, cache = block.forward(x)
        layer.zero_grad()
        dx_fused = block.backward(cache, up)
        grad_fused = layer.grad_z.copy()

        y = layer.forward(x)
        pooled, idx = OrPoolLayer().forward(y)
        assert np.array_equal(out, pooled)
        layer.zero_grad()
        dy = OrPoolLayer().backward(idx, up, y.shape)
        dx_ref = layer.backward(x, dy)
        assert np.allclose(grad_fused, layer.grad_z, atol=1e-12)
        assert np.allclose(dx_fused, dx_ref, atol=1e-12)


class TestRandomLayer:
    def test_pass_through_gathers_first_inputs(self):
        rng = np.random.default_rng(2)
        layer = RandomLayer(6, 4, rng=rng, init="residual", strength=1e9, dtype=np.float64)
        x = rng.random((3, 6))
        y = layer.forward(x)
        assert np.allclose(y, x[:, layer.idx_a], atol=1e-9)

    def test_xor_node(self):
        layer = RandomLayer(2, 1, rng=np.random.default_rng(0), dtype=np.float64)
        layer.idx_a = np.array([0])
        layer.idx_b = np.array([1])
        layer.hard = np.array([6], dtype=np.int32)
        assert layer.forward(np.array([[1.0, 1.0]]))[0, 0] == 0.0
        assert layer.forward(np.array([[1.0, 0.0]]))[0, 0] == 1.0

    def test_gradient_check(self):
        rng = np.random.default_rng(13)
        layer = RandomLayer(5, 8, rng=rng, init="gaussian", dtype=np.float64)
        x = rng.uniform(0.05, 0.95, size=(4, 5))
        up = rng.standard_normal((4, 8))

        layer.zero_grad()
        dx = layer.backward(x, up)

        def loss_wrt_z(zf):
            probe = RandomLayer(5, 8, rng=np.random.default_rng(13), init="gaussian",
                                dtype=np.float64)
            probe.z = zf.reshape(layer.z.shape)
            return float((probe.forward(x) * up).sum())

        fd_z = central_diff(loss_wrt_z, layer.z.ravel()).reshape(layer.z.shape)
        assert rel_err(layer.grad_z, fd_z, floor=1e-6) <= 1e-6

        def loss_wrt_x(xf):
            return float((layer.forward(xf.reshape(x.shape)) * up).sum())

        fd_x = central_diff(loss_wrt_x, x.ravel()).reshape(x.shape)
        assert rel_err(dx, fd_x, floor=1e-6) <= 1e-6

    def test_grouped_layer_respects_slices(self):
        layer = RandomLayer(16, 32, rng=np.random.default_rng(1), groups=4)
        for node in range(32):
            g = node // 8
            assert g * 4 <= layer.idx_a[node] < (g + 1) * 4
            assert g * 4 <= layer.idx_b[node] < (g + 1) * 4

    def test_class_major_grouping_spans_all_groups_per_class(self):
        layer = RandomLayer(16, 40, rng=np.random.default_rng(1), groups=2,
                            class_major=10)
        for cls in range(10):
            nodes = range(cls * 4, (cls + 1) * 4)
            seen = {int(layer.idx_a[n]) // 8 for n in nodes}
            assert seen == {0, 1}


class TestGroupSum:
    def test_example(self):
        head = GroupSumHead(classes=1, tau=2.0)
        assert head.forward(np.array([[1.0, 0.0, 1.0, 1.0]]))[0, 0] == 1.5

    def test_max_score_with_unit_inputs(self):
        head = GroupSumHead(classes=10, tau=6.5)
        x = np.ones((1, 10240))
        scores = head.forward(x)
        assert np.allclose(scores, 1024 / 6.5)
        assert scores[0, 0] == pytest.approx(157.5, abs=0.05)

    def test_zeros(self):
        head = GroupSumHead(classes=10, tau=3.0)
        assert np.all(head.forward(np.zeros((2, 30))) == 0)

    def test_backward_distributes(self):
        head = GroupSumHead(classes=2, tau=4.0)
        up = np.array([[1.0, 2.0]])
        dx = head.backward(up, in_width=6)
        assert np.allclose(dx, [[0.25, 0.25, 0.25, 0.5, 0.5, 0.5]])

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            GroupSumHead(classes=10).forward(np.zeros((1, 13)))

    def test_positive_tau_enforced(self):
        with pytest.raises(ValueError):
            GroupSumHead(tau=0.0)

    @given(st.integers(1, 5), st.integers(1, 4))
    @settings(max_examples=20)
    def test_backward_matches_fd(self, classes, group):
        rng = np.random.default_rng(classes * 10 + group)
        head = GroupSumHead(classes=classes, tau=1.5)
        x = rng.random((2, classes * group))
        up = rng.standard_normal((2, classes))
        dx = head.backward(up, x.shape[1])

        def loss(xf):
            return float((head.forward(xf.reshape(x.shape)) * up).sum())

        fd = central_diff(loss, x.ravel()).reshape(x.shape)
        assert rel_err(dx, fd, floor=1e-6) <= 1e-6


class TestDiscreteRelaxedAgreement:
    def test_conv_block_hard_one_hot_is_bit_exact(self):
        rng = np.random.default_rng(31)
        layer = make_conv(rng, m=2, s=3, n=4, d=3, padding=1, dtype=np.float64)
        layer.harden()
        x = (rng.random((4, 2, 6, 6)) < 0.5).astype(np.float64)
        y = layer.forward(x)
        assert set(np.unique(y)) <= {0.0, 1.0}
        want = tree_conv_reference(layer.conn, hard_dists(layer), x, padding=1)
        assert np.array_equal(y, want)

    def test_random_layer_hard_is_bit_exact(self):
        rng = np.random.default_rng(32)
        layer = RandomLayer(10, 20, rng=rng, init="gaussian", dtype=np.float64)
        layer.harden()
        x = (rng.random((8, 10)) < 0.5).astype(np.float64)
        y = layer.forward(x)
        assert set(np.unique(y)) <= {0.0, 1.0}


def hard_dists(layer):
    from logictree.gates import one_hot

    n, nodes = layer.hard.shape
    return [[one_hot(int(layer.hard[k, t])) for t in range(nodes)] for k in range(n)]
