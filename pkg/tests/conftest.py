"""Shared helpers: finite-difference gradient oracles and kink-safe sampling."""

from __future__ import annotations

import numpy as np
import pytest

from errmax.mlp import MlpModel


def batch_mse(model: MlpModel, X: np.ndarray, y: np.ndarray) -> float:
    r = model.forward_batch(X) - y
    return float(np.mean(r * r))


def fd_param_gradients(
    model: MlpModel, X: np.ndarray, y: np.ndarray, h: float = 1e-5
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Central finite differences of the batch MSE w.r.t. every parameter."""
    grads_w, grads_b = [], []
    for arr_list, out in ((model.weights, grads_w), (model.biases, grads_b)):
        for arr in arr_list:
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                lp = batch_mse(model, X, y)
                arr[idx] = orig - h
                lm = batch_mse(model, X, y)
                arr[idx] = orig
                g[idx] = (lp - lm) / (2.0 * h)
            out.append(g)
    return grads_w, grads_b


def fd_input_gradient(model: MlpModel, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar output w.r.t. the input."""
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (model.forward(xp) - model.forward(xm)) / (2.0 * h)
    return g


def min_preactivation_gap(model: MlpModel, X: np.ndarray) -> float:
    """Smallest |pre-activation| over all hidden units, i.e. distance to a kink."""
    _, trace = model.forward_batch(np.atleast_2d(X), want_trace=True)
    hidden = trace.pre_activations[:-1]
    if not hidden:
        return np.inf
    return min(float(np.min(np.abs(z))) for z in hidden)


def sample_away_from_kinks(
    model: MlpModel,
    rng: np.random.Generator,
    n: int,
    margin: float = 1e-4,
    tries: int = 500,
) -> np.ndarray:
    """Batch whose hidden pre-activations all sit at least ``margin`` from 0.

    Finite differences at h=1e-5 stay on one linear piece of every ReLU for
    such batches, so they measure the true local derivative.
    """
    for _ in range(tries):
        X = rng.uniform(-1.0, 1.0, (n, model.input_dim))
        if min_preactivation_gap(model, X) > margin:
            return X
    pytest.skip("could not find a kink-free batch (degenerate random model)")


def assert_grads_close(got, want, rel: float = 1e-4, abs_floor: float = 1e-7) -> None:
    got = np.asarray(got)
    want = np.asarray(want)
    tol = np.maximum(rel * np.maximum(np.abs(got), np.abs(want)), abs_floor)
    worst = np.max(np.abs(got - want) - tol)
    assert np.all(np.abs(got - want) <= tol), f"gradient mismatch, worst excess {worst:.3g}"
