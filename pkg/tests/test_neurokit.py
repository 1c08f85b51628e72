import numpy as np
import pytest

from ewsub import neurokit as nk
from helpers import gradient_errors


def tiny_arch():
    return [nk.conv1d(4, 3), nk.relu(), nk.flatten(), nk.dense(2), nk.softmax()]


def separable(n=200, d=8, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 2, d)) * 0.5
    x[:, 0, :] += np.where(y == 1, 1.0, -1.0)[:, None]
    return x.astype(np.float32), y


class TestLayers:
    def test_conv_same_length(self):
        m = nk.Model([nk.conv1d(3, 5), nk.flatten(), nk.dense(2), nk.softmax()], (2, 10))
        assert m.layers[0].out_shape == (10, 3)

    def test_conv_matches_direct_correlation(self):
        m = nk.Model([nk.conv1d(1, 3), nk.flatten(), nk.softmax()], (2, 5), dtype=np.float64)
        W, b = m.params["0.W"], m.params["0.b"]
        x = np.random.default_rng(0).normal(size=(1, 2, 5))
        out = m.layers[0].forward({"W": W, "b": b}, {}, x.transpose(0, 2, 1).copy(), False)[0][0, :, 0]
        padded = np.pad(x[0], ((0, 0), (1, 1)))
        # W is (taps, in_channels, out_channels)
        direct = [sum(padded[c, t + j] * W[j, c, 0] for j in range(3) for c in range(2)) + b[0] for t in range(5)]
        np.testing.assert_allclose(out, direct, atol=1e-12)

    def test_maxpool_shape_and_value(self):
        layer = nk.build_layers([nk.maxpool1d(2)], (6, 1))[0]
        x = np.array([[[1.0], [3.0], [2.0], [0.0], [5.0], [4.0]]])
        y, _ = layer.forward({}, {}, x, False)
        np.testing.assert_array_equal(y[0, :, 0], [3, 2, 5])

    def test_residual_shape_mismatch(self):
        with pytest.raises(nk.ShapeError):
            nk.Model([nk.residual(nk.conv1d(5, 3)), nk.flatten(), nk.dense(2), nk.softmax()], (2, 8))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            nk.Model([nk.LayerSpec("gru"), nk.softmax()], (2, 8))

    def test_batch_shape_checked(self):
        m = nk.Model(tiny_arch(), (2, 8))
        with pytest.raises(nk.ShapeError):
            nk.forward(m, np.zeros((3, 2, 9)))

    def test_softmax_rows_sum_to_one(self):
        m = nk.Model([nk.lstm(4), nk.dense(3), nk.softmax()], (2, 8))
        p = nk.forward(m, np.random.default_rng(1).normal(size=(7, 2, 8)))
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)


class TestGradients:
    @pytest.mark.parametrize("seed", range(0, 20, 3))
    def test_random_configs(self, seed):
        _, errs = gradient_errors(seed)
        assert max(errs.values()) <= 1e-4, errs

    def test_labels_out_of_range(self):
        m = nk.Model(tiny_arch(), (2, 8))
        with pytest.raises(ValueError):
            nk.loss_and_grad(m, np.zeros((2, 2, 8)), [0, 2])


class TestAdam:
    def test_first_step_is_learning_rate_times_sign(self):
        cfg = nk.TrainConfig(learning_rate=0.01)
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.array([0.5, -4.0, 0.0])}
        new, state = nk.adam_step(params, grads, nk.AdamState(), cfg)
        # bias correction makes the first update lr * g / (|g| + eps)
        expected = params["w"] - 0.01 * grads["w"] / (np.abs(grads["w"]) + cfg.eps)
        np.testing.assert_allclose(new["w"], expected)
        assert state.t == 1

    def test_hand_two_steps(self):
        cfg = nk.TrainConfig(learning_rate=0.1, beta1=0.5, beta2=0.5, eps=0.0)
        p = {"w": np.array([0.0])}
        p, s = nk.adam_step(p, {"w": np.array([1.0])}, nk.AdamState(), cfg)
        p, s = nk.adam_step(p, {"w": np.array([3.0])}, s, cfg)
        # m = 0.25 + 1.5 = 1.75 -> /0.75; v = 0.25 + 4.5 = 4.75 -> /0.75
        step2 = 0.1 * (1.75 / 0.75) / np.sqrt(4.75 / 0.75)
        np.testing.assert_allclose(p["w"], [-0.1 - step2])

    def test_shape_mismatch(self):
        with pytest.raises(nk.ShapeError):
            nk.adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, nk.AdamState(), nk.TrainConfig())
        with pytest.raises(nk.ShapeError):
            nk.adam_step({"w": np.zeros(3)}, {"v": np.zeros(3)}, nk.AdamState(), nk.TrainConfig())

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            nk.TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            nk.TrainConfig(beta1=1.0)


class TestTraining:
    def test_learns_separable_problem(self):
        x, y = separable()
        model, hist = nk.train(tiny_arch(), x[:150], y[:150], x[150:], y[150:],
                               nk.TrainConfig(max_epochs=20, learning_rate=1e-2, batch_size=32))
        assert nk.evaluate(model, x[150:], y[150:]) >= 0.95
        assert hist.train_loss[-1] < hist.train_loss[0]

    def test_deterministic(self):
        x, y = separable(seed=1)
        cfg = nk.TrainConfig(max_epochs=3, seed=7)
        a, _ = nk.train(tiny_arch(), x, y, x, y, cfg)
        b, _ = nk.train(tiny_arch(), x, y, x, y, cfg)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_early_stopping_returns_best(self):
        x, y = separable(n=60, seed=2)
        rng = np.random.default_rng(0)
        model, hist = nk.train(tiny_arch(), x, rng.permutation(y), x[:20], y[:20],
                               nk.TrainConfig(max_epochs=50, patience=2, learning_rate=0.05))
        assert hist.epochs <= hist.best_epoch + 3
        probs = nk.forward(model, x[:20])
        assert nk.cross_entropy(probs, y[:20]) == pytest.approx(min(hist.val_loss), rel=1e-5)

    def test_zero_epochs(self):
        x, y = separable(n=10)
        _, hist = nk.train(tiny_arch(), x, y, x, y, nk.TrainConfig(max_epochs=0))
        assert hist.epochs == 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nk.train(tiny_arch(), np.zeros((0, 2, 8)), np.zeros(0, int), None, None, nk.TrainConfig())

    def test_running_stats_move(self):
        x, y = separable(n=64)
        arch = [nk.conv1d(2, 3), nk.batchnorm(), nk.relu(), nk.flatten(), nk.dense(2), nk.softmax()]
        model, _ = nk.train(arch, x, y, None, None, nk.TrainConfig(max_epochs=2))
        assert not np.allclose(model.buffers["1.running_mean"], 0)


class TestEvaluate:
    def test_masking_does_not_touch_input(self):
        x, y = separable(n=20)
        before = x.copy()
        m = nk.Model(tiny_arch(), (2, 8))
        nk.evaluate(m, x, y, [0, 3])
        np.testing.assert_array_equal(x, before)

    def test_mask_equals_manual_zeroing(self):
        x, y = separable(n=30, seed=4)
        m = nk.Model(tiny_arch(), (2, 8), seed=3)
        z = x.copy()
        z[:, :, [1, 5]] = 0
        assert nk.evaluate(m, x, y, [5, 1]) == float(np.mean(nk.forward(m, z).argmax(1) == y))

    def test_bad_index(self):
        m = nk.Model(tiny_arch(), (2, 8))
        with pytest.raises(IndexError):
            nk.evaluate(m, np.zeros((2, 2, 8)), [0, 0], [8])


class TestCheckpoint:
    def test_round_trip(self):
        arch = [nk.conv1d(3, 3), nk.batchnorm(), nk.relu(), nk.residual(nk.conv1d(3, 3)), nk.maxpool1d(2),
                nk.lstm(4), nk.dense(3), nk.softmax()]
        m = nk.Model(arch, (2, 8), seed=5)
        m.buffers["1.running_mean"] = np.arange(3, dtype=np.float32)
        blob = nk.save_checkpoint(m)
        back = nk.load_checkpoint(blob)
        assert back.specs == m.specs
        for store in ("params", "buffers"):
            for k, v in getattr(m, store).items():
                np.testing.assert_array_equal(getattr(back, store)[k], v)
        assert nk.save_checkpoint(back) == blob
        x = np.random.default_rng(0).normal(size=(4, 2, 8))
        np.testing.assert_array_equal(nk.forward(back, x), nk.forward(m, x))

    @pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3],
                                        lambda b: b[:4] + b"\x09\x00\x00\x00" + b[8:]])
    def test_corrupt(self, mutate):
        blob = nk.save_checkpoint(nk.Model(tiny_arch(), (2, 8)))
        with pytest.raises(ValueError):
            nk.load_checkpoint(mutate(blob))
