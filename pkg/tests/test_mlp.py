"""Network core: initialization, forward, backprop, training, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from errmax.errors import (
    InvalidSpecError,
    ParseError,
    ShapeError,
    StaleTraceError,
    TrainingDivergedError,
)
from errmax.mlp import (
    MlpModel,
    TrainConfig,
    init_mlp,
    learning_rate_at,
    predict,
    train,
)

from conftest import (
    assert_grads_close,
    fd_input_gradient,
    fd_param_gradients,
    sample_away_from_kinks,
)


class TestInit:
    def test_paper_scale_shapes(self):
        """Five 512-wide hidden layers over a 5-D input give six weight matrices."""
        m = init_mlp([5, 512, 512, 512, 512, 512, 1], seed=7)
        shapes = [w.shape for w in m.weights]
        assert shapes == [(5, 512)] + [(512, 512)] * 4 + [(512, 1)]
        assert all(b.shape == (s[1],) for b, s in zip(m.biases, shapes))
        assert all(np.all(b == 0.0) for b in m.biases)

    def test_minimal_network(self):
        m = init_mlp([1, 1], seed=0)
        assert m.n_layers == 1
        assert m.biases[0][0] == 0.0

    def test_same_seed_identical(self):
        a = init_mlp([4, 32, 1], seed=123)
        b = init_mlp([4, 32, 1], seed=123)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_different_seed_differs(self):
        a = init_mlp([4, 32, 1], seed=1)
        b = init_mlp([4, 32, 1], seed=2)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_fan_in_scaling(self):
        m = init_mlp([100, 50, 1], seed=3)
        assert np.max(np.abs(m.weights[0])) <= np.sqrt(6.0 / 100)
        assert np.max(np.abs(m.weights[1])) <= np.sqrt(6.0 / 50)

    @pytest.mark.parametrize("dims", [[5], [3, 0, 1], [3, 4, 2], [3, -1, 1]])
    def test_invalid_dims_rejected(self, dims):
        with pytest.raises(InvalidSpecError):
            init_mlp(dims, seed=0)


class TestForward:
    def test_zero_weights_return_output_bias(self):
        m = init_mlp([3, 8, 1], seed=0)
        for w in m.weights:
            w[:] = 0.0
        m.biases[-1][0] = 2.5
        for x in np.random.default_rng(0).random((5, 3)):
            assert m.forward(x) == 2.5

    def test_linear_single_layer(self):
        m = init_mlp([1, 1], seed=0)
        m.weights[0][0, 0] = 4.0
        assert m.forward(np.array([0.5])) == pytest.approx(2.0, rel=1e-15)

    def test_deterministic_repeated_calls(self):
        m = init_mlp([4, 16, 16, 1], seed=9)
        x = np.random.default_rng(1).random(4)
        values = {m.forward(x) for _ in range(100)}
        assert len(values) == 1

    def test_dimension_mismatch(self):
        m = init_mlp([3, 4, 1], seed=0)
        with pytest.raises(ShapeError):
            m.forward(np.zeros(4))
        with pytest.raises(ShapeError):
            m.forward_batch(np.zeros((2, 2)))


class TestBackwardParams:
    def test_hand_derivative_single_weight(self):
        """loss = (w*x - z)^2 with w=2, x=1, z=0 has dL/dw = 2*2*1 = 4."""
        m = init_mlp([1, 1], seed=0)
        m.weights[0][0, 0] = 2.0
        X = np.array([[1.0]])
        out, trace = m.forward_batch(X, want_trace=True)
        upstream = 2.0 * (out - np.array([0.0]))
        gw, gb = m.backward_params(trace, upstream)
        assert gw[0][0, 0] == pytest.approx(4.0, rel=1e-15)
        assert gb[0][0] == pytest.approx(4.0, rel=1e-15)

    def test_zero_upstream_zero_gradients(self):
        m = init_mlp([3, 8, 8, 1], seed=4)
        X = np.random.default_rng(0).random((6, 3))
        _, trace = m.forward_batch(X, want_trace=True)
        gw, gb = m.backward_params(trace, np.zeros(6))
        assert all(np.all(g == 0.0) for g in gw)
        assert all(np.all(g == 0.0) for g in gb)

    def test_matches_finite_differences(self):
        """Backprop agrees with central differences on a random 3-layer net."""
        rng = np.random.default_rng(12)
        m = init_mlp([3, 10, 10, 1], seed=12)
        X = sample_away_from_kinks(m, rng, 8)
        y = rng.normal(size=8)
        out, trace = m.forward_batch(X, want_trace=True)
        upstream = 2.0 * (out - y) / 8
        gw, gb = m.backward_params(trace, upstream)
        fw, fb = fd_param_gradients(m, X, y)
        for got, want in zip(gw + gb, fw + fb):
            assert_grads_close(got, want)

    def test_stale_trace_rejected(self):
        m = init_mlp([2, 4, 1], seed=0)
        X = np.random.default_rng(0).random((4, 2))
        _, trace = m.forward_batch(X, want_trace=True)
        train(m, X, np.zeros(4), TrainConfig(max_epochs=1, batch_size=4), seed=0)
        with pytest.raises(StaleTraceError):
            m.backward_params(trace, np.zeros(4))


class TestInputGradient:
    def test_linear_gradient_is_weight(self):
        m = init_mlp([1, 1], seed=0)
        m.weights[0][0, 0] = -1.75
        for x in (-2.0, 0.3, 5.0):
            assert m.input_gradient(np.array([x]))[0] == -1.75

    def test_zero_weights_zero_gradient(self):
        m = init_mlp([4, 8, 1], seed=0)
        for w in m.weights:
            w[:] = 0.0
        assert np.all(m.input_gradient(np.full(4, 0.2)) == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(77)
        m = init_mlp([4, 12, 12, 1], seed=77)
        X = sample_away_from_kinks(m, rng, 5)
        for x in X:
            assert_grads_close(m.input_gradient(x), fd_input_gradient(m, x))

    def test_dimension_mismatch(self):
        m = init_mlp([3, 4, 1], seed=0)
        with pytest.raises(ShapeError):
            m.input_gradient(np.zeros(2))


class TestTrain:
    def test_lr_schedule_divided_by_10_every_50(self):
        cfg = TrainConfig(initial_lr=0.01, lr_decay_factor=10, lr_decay_period_epochs=50)
        assert learning_rate_at(cfg, 0) == 0.01
        assert learning_rate_at(cfg, 49) == 0.01
        assert learning_rate_at(cfg, 50) == 0.001
        assert learning_rate_at(cfg, 100) == 0.0001

    def test_lr_schedule_exact_on_logged_epochs(self):
        rng = np.random.default_rng(3)
        X = rng.random((64, 2))
        y = X[:, 0]
        m = init_mlp([2, 4, 1], seed=3)
        cfg = TrainConfig(
            initial_lr=0.01,
            lr_decay_period_epochs=5,
            max_epochs=23,
            stop_tol=1e-12,
            batch_size=16,
        )
        hist = train(m, X, y, cfg, seed=0)
        for e, lr in enumerate(hist.lrs):
            assert lr * cfg.lr_decay_factor ** (e // 5) == cfg.initial_lr

    def test_converges_on_linear_target(self):
        """z = 3x is learnable by a [1, 8, 1] net to well under 1e-3 MSE."""
        rng = np.random.default_rng(5)
        X = rng.random((1000, 1))
        y = 3.0 * X[:, 0]
        m = init_mlp([1, 8, 1], seed=5)
        cfg = TrainConfig(
            initial_lr=0.1,
            lr_decay_period_epochs=150,
            batch_size=32,
            max_epochs=300,
            stop_tol=1e-9,
        )
        hist = train(m, X, y, cfg, seed=6)
        assert hist.losses[-1] < 1e-3

    def test_zero_loss_fixed_point_stops_quickly(self):
        m = init_mlp([2, 6, 1], seed=8)
        rng = np.random.default_rng(8)
        X = rng.random((100, 2))
        y = m.forward_batch(X)  # the model is already exact
        cfg = TrainConfig(stop_window_epochs=10, max_epochs=100)
        hist = train(m, X, y.copy(), cfg, seed=1)
        assert hist.stopped_early
        assert hist.epochs <= cfg.stop_window_epochs + 1
        assert hist.losses[-1] == 0.0

    def test_divergence_raises_with_epoch(self):
        rng = np.random.default_rng(9)
        X = rng.random((64, 2))
        y = 100.0 * rng.random(64)
        m = init_mlp([2, 16, 1], seed=9)
        cfg = TrainConfig(initial_lr=1e6, max_epochs=50, batch_size=8)
        with pytest.raises(TrainingDivergedError) as err:
            train(m, X, y, cfg, seed=0)
        assert err.value.epoch >= 0

    def test_bit_reproducible(self):
        rng = np.random.default_rng(10)
        X = rng.random((200, 3))
        y = X.sum(axis=1)
        cfg = TrainConfig(max_epochs=20, batch_size=32, stop_tol=1e-12)
        runs = []
        for _ in range(2):
            m = init_mlp([3, 8, 1], seed=42)
            train(m, X, y, cfg, seed=43)
            runs.append(m)
        for wa, wb in zip(runs[0].weights, runs[1].weights):
            assert np.array_equal(wa, wb)

    def test_all_parameters_finite_after_training(self):
        rng = np.random.default_rng(11)
        X = rng.random((256, 3))
        y = 5.0 * X[:, 0] - X[:, 2]
        m = init_mlp([3, 16, 1], seed=11)
        train(m, X, y, TrainConfig(max_epochs=30, stop_tol=1e-12), seed=0)
        assert all(np.all(np.isfinite(w)) for w in m.weights)
        assert all(np.all(np.isfinite(b)) for b in m.biases)

    def test_momentum_changes_trajectory(self):
        rng = np.random.default_rng(13)
        X = rng.random((128, 2))
        y = X[:, 0]
        runs = []
        for mom in (0.0, 0.9):
            m = init_mlp([2, 8, 1], seed=1)
            cfg = TrainConfig(max_epochs=10, momentum=mom, stop_tol=1e-12)
            train(m, X, y, cfg, seed=2)
            runs.append(m)
        assert not np.array_equal(runs[0].weights[0], runs[1].weights[0])

    def test_weighted_objective_used(self):
        """A weight of 0 on half the data makes those samples irrelevant."""
        rng = np.random.default_rng(14)
        X = rng.random((100, 1))
        y = np.where(np.arange(100) < 50, 1.0, 57.0)
        w = np.where(np.arange(100) < 50, 2.0, 0.0)
        m = init_mlp([1, 4, 1], seed=2)
        cfg = TrainConfig(initial_lr=0.05, max_epochs=200, stop_tol=1e-10, batch_size=25)
        train(m, X, y, cfg, seed=3, sample_weight=w)
        preds = m.forward_batch(X[:50])
        assert np.all(np.abs(preds - 1.0) < 0.5)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = init_mlp([3, 32, 32, 1], seed=99)
        rng = np.random.default_rng(0)
        X = rng.random((64, 3))
        train(m, X, X.sum(axis=1), TrainConfig(max_epochs=3, stop_tol=1e-12), seed=1)
        path = tmp_path / "model.ckpt"
        m.save(path, extra={"note": "test"})
        loaded, extra = MlpModel.load(path)
        assert extra == {"note": "test"}
        assert loaded.layer_dims == m.layer_dims
        assert loaded.rng_seed == m.rng_seed
        assert loaded.version == m.version
        for wa, wb in zip(m.weights, loaded.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(m.biases, loaded.biases):
            assert np.array_equal(ba, bb)

    def test_rewrite_is_byte_identical(self, tmp_path):
        m = init_mlp([2, 8, 1], seed=5)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        m.save(a)
        m.save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ParseError):
            MlpModel.load(path)


def test_predict_chunked_matches_forward():
    m = init_mlp([3, 8, 1], seed=0)
    X = np.random.default_rng(0).random((1000, 3))
    assert np.array_equal(predict(m, X, chunk_size=128), m.forward_batch(X))
