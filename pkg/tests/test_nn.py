import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scalocast.errors import ConfigError, NumericError, ShapeError
from scalocast.nn import (Adam, Conv2D, Dense, Dropout, EarlyStopping, Flatten, MaxPool2D, Network, TrainConfig,
                          dropout, loss_and_grads, mse_loss, plateau_schedule, train)

from .models import gradient_relative_error, overfit_run, tiny_model
from .oracles import adam_scalar, conv3x3_direct, plateau_counter


def conv_with(kernel, bias, relu=True):
    layer = Conv2D(kernel.shape[2], kernel.shape[3], relu)
    layer.params = [kernel, bias]
    return layer


class TestConv:
    def test_all_ones(self):
        out = conv_with(np.ones((3, 3, 1, 1)), np.zeros(1)).forward(np.ones((1, 3, 3, 1)))
        np.testing.assert_array_equal(out[0, :, :, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_bias_only(self):
        out = conv_with(np.zeros((3, 3, 2, 3)), np.array([0.5, 1.0, 2.0])).forward(np.ones((2, 5, 5, 2)))
        np.testing.assert_array_equal(out, np.broadcast_to([0.5, 1.0, 2.0], (2, 5, 5, 3)))

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 8, 8, 3))
        k, b = rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
        np.testing.assert_allclose(conv_with(k, b, relu=False).forward(x), conv3x3_direct(x, k, b), atol=1e-12)
        np.testing.assert_allclose(conv_with(k, b).forward(x), np.maximum(conv3x3_direct(x, k, b), 0), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv_with(np.zeros((3, 3, 2, 1)), np.zeros(1)).forward(np.ones((1, 3, 3, 3)))
        with pytest.raises(ShapeError):
            Network([Conv2D(2, 4)], (24, 24, 3))


class TestPool:
    def test_halves_and_takes_max(self):
        x = np.arange(16.0).reshape(1, 4, 4, 1)
        out = MaxPool2D().forward(x)
        np.testing.assert_array_equal(out[0, :, :, 0], [[5, 7], [13, 15]])

    def test_shapes(self):
        net = Network([Conv2D(1, 2), MaxPool2D(), Conv2D(2, 2), MaxPool2D()], (24, 24, 1))
        assert net.output_shape == (6, 6, 2)


class TestDense:
    def _dense(self, w, b, act):
        layer = Dense(w.shape[0], w.shape[1], act)
        layer.params = [w, b]
        return layer

    def test_identity(self):
        v = np.array([[1.5, -2.0, 3.0]])
        np.testing.assert_array_equal(self._dense(np.eye(3), np.zeros(3), "identity").forward(v), v)

    def test_leaky_slope(self):
        out = self._dense(np.eye(2), np.zeros(2), "leaky_relu").forward(np.array([[-1.0, 2.0]]))
        np.testing.assert_allclose(out, [[-0.3, 2.0]], atol=1e-15)

    def test_against_dot_products(self):
        rng = np.random.default_rng(1)
        w, b, v = rng.normal(size=(5, 3)), rng.normal(size=3), rng.normal(size=(4, 5))
        out = self._dense(w, b, "identity").forward(v)
        for i in range(4):
            for j in range(3):
                assert out[i, j] == pytest.approx(sum(v[i, k] * w[k, j] for k in range(5)) + b[j], abs=1e-12)

    def test_shape_and_activation_errors(self):
        with pytest.raises(ShapeError):
            self._dense(np.eye(2), np.zeros(2), "identity").forward(np.ones((1, 3)))
        with pytest.raises(ConfigError):
            Dense(2, 2, "tanh")


class TestDropout:
    @pytest.mark.parametrize("train_mode", [True, False])
    def test_zero_probability(self, train_mode):
        v = np.arange(10.0)
        np.testing.assert_array_equal(dropout(v, 0.0, train_mode, np.random.default_rng(0)), v)

    @given(st.floats(0, 0.99))
    def test_infer_is_identity(self, p):
        v = np.arange(10.0)
        np.testing.assert_array_equal(dropout(v, p, False), v)

    def test_law_of_large_numbers(self):
        out = dropout(np.ones(10 ** 6), 0.1, True, np.random.default_rng(3))
        assert abs(out.mean() - 1.0) < 0.01
        np.testing.assert_allclose(np.unique(out), [0.0, 1 / 0.9], atol=1e-15)

    def test_bad_probability(self):
        with pytest.raises(ConfigError):
            Dropout(1.0)


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        net = tiny_model(seed, pooling=seed % 2 == 0, dropout=0.2 if seed > 2 else 0.0)
        x, y = rng.normal(size=(3, 4, 4, 2)), rng.normal(size=(3, 4))
        assert gradient_relative_error(net, x, y, seed) < 1e-4

    def test_zero_everything(self):
        net = tiny_model(0)
        net.set_params([np.zeros_like(p) for p in net.params])
        _, grads = loss_and_grads(net, np.zeros((2, 4, 4, 2)), np.zeros((2, 4)))
        assert all(not g.any() for g in grads)

    def test_zero_weights_only_output_bias_moves(self):
        net = tiny_model(0)
        net.set_params([np.zeros_like(p) for p in net.params])
        _, grads = loss_and_grads(net, np.zeros((2, 4, 4, 2)), np.ones((2, 4)))
        assert all(not g.any() for g in grads[:-1])
        np.testing.assert_allclose(grads[-1], -2 / 4 * np.ones(4) * 1.0)

    def test_duplicated_batch(self):
        rng = np.random.default_rng(5)
        net = tiny_model(1)
        x, y = rng.normal(size=(1, 4, 4, 2)), rng.normal(size=(1, 4))
        g1 = loss_and_grads(net, x, y)[1]
        g2 = loss_and_grads(net, np.concatenate([x, x]), np.concatenate([y, y]))[1]
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_mse(self):
        loss, grad = mse_loss(np.array([[1.0, 3.0]]), np.array([[0.0, 0.0]]))
        assert loss == 5.0
        np.testing.assert_array_equal(grad, [[1.0, 3.0]])


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        Adam().step(p, [np.zeros(2)], 0.1)
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    @settings(max_examples=30)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=20), st.floats(1e-4, 1e-1))
    def test_scalar_oracle(self, grads, lr):
        p = [np.zeros(1)]
        opt = Adam()
        got = []
        for g in grads:
            opt.step(p, [np.array([g])], lr)
            got.append(p[0][0])
        np.testing.assert_allclose(got, adam_scalar(grads, lr), atol=1e-12, rtol=0)

    def test_g_then_minus_g(self):
        p = [np.zeros(1)]
        opt = Adam()
        for g in (2.5, -2.5):
            opt.step(p, [np.array([g])], 0.01)
        assert p[0][0] == pytest.approx(adam_scalar([2.5, -2.5], 0.01)[-1], abs=1e-12)


class TestPlateau:
    def test_decreasing_is_constant(self):
        assert set(plateau_schedule(np.linspace(1, 0, 50), 0.1)) == {0.1}

    def test_constant_decays_at_11_and_21(self):
        lrs = plateau_schedule([1.0] * 25, 1.0, patience=10)
        # lrs[i] is the rate after the check at the end of epoch i + 1
        changes = [i + 1 for i in range(1, 25) if lrs[i] != lrs[i - 1]]
        assert changes[:2] == [11, 21]
        assert lrs[-1] == pytest.approx(0.81)

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=60), st.integers(1, 8))
    def test_counter_oracle(self, losses, patience):
        assert plateau_schedule(losses, 1.0, patience, 0.9) == plateau_counter(losses, 1.0, patience, 0.9)


class TestTrain:
    def _data(self, n=10, seed=0):
        rng = np.random.default_rng(seed)
        return rng.normal(size=(n, 4, 4, 2)), rng.normal(size=(n, 4))

    def test_early_stopping_after_51(self):
        stopper = EarlyStopping(50)
        stops = [stopper.update(1.0 + e) for e in range(100)]
        assert stops.index(True) + 1 == 51 and stopper.best_epoch == 0

    def test_restores_best_weights(self):
        x, y = self._data()
        net = tiny_model(0)
        hist = train(net, x, y, x[:3], y[:3], TrainConfig(lr=0.05, max_epochs=40, patience=5), np.random.default_rng(0))
        assert hist.best_epoch == int(np.argmin(hist.val_loss))
        from scalocast.nn import evaluate_loss
        assert evaluate_loss(net, x[:3], y[:3]) == pytest.approx(min(hist.val_loss), abs=1e-12)

    def test_history_fields(self):
        x, y = self._data()
        hist = train(tiny_model(0), x, y, x, y, TrainConfig(max_epochs=12, lr_patience=2), np.random.default_rng(0))
        assert len(hist) == len(hist.train_loss) == len(hist.lr) == len(hist.seconds) == 12
        assert [r["epoch"] for r in hist.as_rows()] == list(range(1, 13))

    def test_deterministic(self):
        x, y = self._data()
        runs = []
        for _ in range(2):
            net = tiny_model(3, dropout=0.1)
            h = train(net, x, y, x, y, TrainConfig(max_epochs=15, shuffle=True), np.random.default_rng(9))
            runs.append((h.train_loss, h.val_loss, [p.tobytes() for p in net.params]))
        assert runs[0] == runs[1]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_aborts(self):
        x, y = self._data()
        y[0, 0] = np.inf
        with pytest.raises(NumericError):
            train(tiny_model(0), x, y, x, y, TrainConfig(max_epochs=2))

    def test_empty_partition(self):
        x, y = self._data()
        with pytest.raises(ConfigError):
            train(tiny_model(0), x, y, x[:0], y[:0])

    def test_overfit_eight_samples(self):
        hist, mse = overfit_run()
        assert mse < 1e-3

    def test_dense_only_full_batch_descent_monotone(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(20, 5)), rng.normal(size=(20, 2))
        net = Network([Dense(5, 2, "identity")], (5,)).init(rng)
        losses = []
        for _ in range(100):
            loss, grads = loss_and_grads(net, x, y)
            losses.append(loss)
            for p, g in zip(net.params, grads):
                p -= 0.01 * g
        assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))

    def test_spec_round_trip(self):
        net = tiny_model(0, dropout=0.1)
        clone = Network.from_spec(net.spec(), net.input_shape)
        assert clone.spec() == net.spec() and clone.param_count() == net.param_count()
