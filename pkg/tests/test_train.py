import math

import numpy as np
import pytest

from logictree.model import build_network
from logictree.tasks import pattern_spec, pattern_task, xor_spec, xor_task
from logictree.train import (
    AdamW,
    TrainConfig,
    TrainingDiverged,
    activation_stats,
    batch_loss_and_grads,
    fit,
    gradient_decay_profile,
    hard_accuracy,
    load_checkpoint,
    mean_gradient_decay,
    save_checkpoint,
    soft_accuracy,
    softmax_cross_entropy,
)

from conftest import central_diff, rel_err


class TestCrossEntropy:
    def test_uniform_scores(self):
        loss, _ = softmax_cross_entropy(np.zeros((3, 10)), np.array([0, 4, 9]))
        assert loss == pytest.approx(math.log(10), abs=1e-12)

    def test_confident_correct_is_near_zero(self):
        scores = np.zeros((1, 10))
        scores[0, 2] = 50.0
        loss, _ = softmax_cross_entropy(scores, np.array([2]))
        assert loss < 1e-20

    def test_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(0)
        scores = rng.standard_normal((4, 10))
        labels = rng.integers(0, 10, size=4)
        _, grad = softmax_cross_entropy(scores, labels)
        p = np.exp(scores - scores.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        onehot = np.eye(10)[labels]
        assert np.allclose(grad, (p - onehot) / 4, atol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal((2, 10))
        labels = np.array([3, 7])
        _, grad = softmax_cross_entropy(scores, labels)
        fd = central_diff(
            lambda s: softmax_cross_entropy(s.reshape(2, 10), labels)[0],
            scores.ravel(),
        ).reshape(2, 10)
        assert rel_err(grad, fd, floor=1e-6) <= 1e-6

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.array([[np.inf, 0.0]]), np.array([0]))


class TestAdamW:
    def test_zero_grad_no_decay_keeps_params(self):
        p = np.array([1.0, -2.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step([np.zeros(2)])
        assert np.array_equal(p, [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        # bias-corrected first Adam step: lr * g / (|g| + eps') ~ lr * sign(g)
        p = np.zeros(3)
        g = np.array([0.5, -2.0, 1e-3])
        opt = AdamW([p], lr=0.02, weight_decay=0.0)
        opt.step([g])
        assert np.allclose(p, -0.02 * np.sign(g), atol=1e-5)

    def test_decoupled_decay_scales_params(self):
        p = np.full(4, 10.0)
        opt = AdamW([p], lr=0.02, weight_decay=0.002)
        opt.step([np.zeros(4)])
        assert np.allclose(p, 10.0 * (1 - 0.02 * 0.002), atol=1e-12)

    def test_shape_mismatch_rejected(self):
        opt = AdamW([np.zeros(3)], lr=0.1)
        with pytest.raises(ValueError):
            opt.step([np.zeros(4)])

    def test_matches_reference_sequence(self):
        # independent scalar reference for a few steps
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        p = np.array([0.3])
        opt = AdamW([p], lr=lr)
        m = v = 0.0
        x = 0.3
        rng = np.random.default_rng(2)
        for t in range(1, 6):
            g = float(rng.standard_normal())
            opt.step([np.array([g])])
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
            assert p[0] == pytest.approx(x, rel=1e-10)


class TestFitXor:
    def test_learns_xor_exactly(self):
        X, y = xor_task()
        spec = xor_spec()
        net = build_network(spec, seed=1, init="gaussian")
        cfg = TrainConfig(steps=2000, batch_size=4, learning_rate=0.05,
                          eval_interval=100, seed=1, init="gaussian")
        res = fit(net, X, y, cfg, val_planes=X, val_labels=y)
        assert res.best_val_hard == 1.0
        res.restore_best(net)
        assert hard_accuracy(net, X, y) == 1.0

    def test_determinism_single_thread(self, tmp_path):
        X, y = xor_task()
        logs = []
        for run in range(2):
            spec = xor_spec()
            net = build_network(spec, seed=2, init="gaussian")
            cfg = TrainConfig(steps=300, batch_size=4, learning_rate=0.05,
                              eval_interval=50, seed=3, init="gaussian")
            path = str(tmp_path / f"m{run}.csv")
            fit(net, X, y, cfg, val_planes=X, val_labels=y, metrics_path=path)
            logs.append(open(path).read())
        assert logs[0] == logs[1]

    def test_best_tracking_is_monotone(self):
        X, y = xor_task()
        spec = xor_spec()
        net = build_network(spec, seed=4, init="gaussian")
        cfg = TrainConfig(steps=500, batch_size=4, learning_rate=0.05,
                          eval_interval=50, seed=5, init="gaussian")
        res = fit(net, X, y, cfg, val_planes=X, val_labels=y)
        best_seen = -1.0
        for row in res.metrics.rows:
            assert row["val_acc_hard"] <= res.best_val_hard + 1e-12
            best_seen = max(best_seen, row["val_acc_hard"])
        assert best_seen == res.best_val_hard

    def test_divergence_guard(self):
        X, y = xor_task()
        net = build_network(xor_spec(), seed=6)
        net.params()[0][...] = np.nan
        cfg = TrainConfig(steps=10, batch_size=4, learning_rate=0.05, seed=0)
        with pytest.raises((TrainingDiverged, ValueError)):
            fit(net, X, y, cfg)


class TestThreadedGradients:
    def test_threaded_matches_serial(self):
        Xtr, ytr = pattern_task(64, seed=0)
        spec = pattern_spec(kernels=8, rand_width=24, tau=2.0)
        net = build_network(spec, seed=1, init="gaussian", dtype=np.float64)
        x = Xtr.astype(np.float64)
        l1, a1 = batch_loss_and_grads(net, x, ytr, threads=1)
        g1 = [g.copy() for g in net.grads()]
        l2, a2 = batch_loss_and_grads(net, x, ytr, threads=3)
        g2 = net.grads()
        assert l1 == pytest.approx(l2, rel=1e-12)
        for a, b in zip(g1, g2):
            assert np.allclose(a, b, atol=1e-12)


class TestActivationStats:
    def test_gaussian_init_pre_pool_mean_half(self):
        spec = pattern_spec(kernels=64, rand_width=96, tau=2.0)
        net = build_network(spec, seed=2, init="gaussian")
        X, _ = pattern_task(256, seed=3)
        rows = activation_stats(net, X)
        assert len(rows) == 1
        pre, post, ref = rows[0]
        assert ref == 0.5
        assert pre == pytest.approx(0.5, abs=0.01)
        assert post > pre  # pooling takes the max

    def test_constant_zero_input_passthrough(self):
        spec = pattern_spec(kernels=8, rand_width=24, tau=2.0)
        net = build_network(spec, seed=4, init="residual", strength=1e9)
        X = np.zeros((8, 1, 8, 8), dtype=np.uint8)
        rows = activation_stats(net, X)
        assert rows[0][0] == pytest.approx(0.0, abs=1e-7)
        assert rows[0][1] == pytest.approx(0.0, abs=1e-7)

    def test_constant_one_input_post_pool_is_one(self):
        spec = pattern_spec(kernels=8, rand_width=24, tau=2.0)
        net = build_network(spec, seed=5, init="residual", strength=1e9)
        X = np.ones((8, 1, 8, 8), dtype=np.uint8)
        rows = activation_stats(net, X)
        assert rows[0][1] == pytest.approx(1.0, abs=1e-7)


class TestGradientDecay:
    def test_gaussian_decay_in_reported_band(self):
        mean = mean_gradient_decay(seeds=range(10), width=512, depth=10,
                                   init="gaussian")
        assert 0.05 <= mean <= 0.25

    def test_residual_preserves_gradient(self):
        mean = mean_gradient_decay(seeds=range(10), width=512, depth=10,
                                   init="residual")
        assert mean >= 0.8

    def test_profile_shape(self):
        r = gradient_decay_profile(width=128, depth=6, seed=0)
        assert r.shape == (5,)
        assert np.all(r > 0)


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        spec = pattern_spec(kernels=8, rand_width=24, tau=2.0)
        net = build_network(spec, seed=6, init="gaussian")
        X, y = pattern_task(32, seed=7)
        cfg = TrainConfig(steps=5, batch_size=16, learning_rate=0.05, seed=0)
        fit(net, X, y, cfg)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, net, cfg, step=5)
        again, manifest = load_checkpoint(path)
        assert manifest["step"] == 5
        assert manifest["format_version"] == 1
        for a, b in zip(net.params(), again.params()):
            assert np.allclose(a, b, atol=1e-7)  # float32 storage
        bits = X.astype(np.float32)
        assert np.allclose(net.forward(bits), again.forward(bits), atol=1e-5)

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(str(p))

    def test_soft_and_hard_accuracy_agree_when_hardened(self):
        spec = pattern_spec(kernels=8, rand_width=24, tau=2.0)
        net = build_network(spec, seed=8, init="gaussian")
        X, y = pattern_task(64, seed=9)
        net.harden()
        soft = soft_accuracy(net, X, y)
        net.unharden()
        hard = hard_accuracy(net, X, y)
        assert soft == pytest.approx(hard, abs=1e-12)
