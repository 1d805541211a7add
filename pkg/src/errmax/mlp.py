"""Dense ReLU network for scalar regression, with backprop to parameters and inputs.

Everything is float64: the mining stage takes finite differences at step 1e-3
of quantities this model must resolve, and the gradient checks compare against
central differences at 1e-5, neither of which survives single precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidSpecError,
    ParseError,
    ShapeError,
    StaleTraceError,
    TrainingDivergedError,
)

_CHECKPOINT_MAGIC = b"ERRMAX-MLP-V1\n"


@dataclass
class ForwardTrace:
    """Per-layer intermediates of one batch forward pass, kept for backprop.

    ``pre_activations[i]`` is the affine output of layer i before its
    activation; ``activations[i]`` is after (ReLU for hidden layers, identity
    for the output layer). ``model_version`` pins the parameter state the
    trace was recorded from.
    """

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    model_version: int


@dataclass
class TrainConfig:
    """Mini-batch SGD settings with a step-decay learning-rate schedule.

    The learning rate at epoch e is ``initial_lr / lr_decay_factor**(e //
    lr_decay_period_epochs)``. Training halts once the relative change of the
    training objective over ``stop_window_epochs`` epochs drops below
    ``stop_tol``, or at ``max_epochs``. ``loss_alpha`` is the weight given to
    the base set when training on a (base, mined) pair; "pooled" resolves to
    |base| / (|base| + |mined|), which makes the objective the plain MSE over
    the union.
    """

    initial_lr: float = 0.01
    lr_decay_factor: float = 10.0
    lr_decay_period_epochs: int = 50
    batch_size: int = 256
    stop_tol: float = 0.001
    stop_window_epochs: int = 10
    max_epochs: int = 200
    momentum: float = 0.0
    loss_alpha: float | str = "pooled"

    def validate(self) -> None:
        if self.initial_lr <= 0:
            raise InvalidSpecError("initial_lr must be positive")
        if self.lr_decay_factor <= 1:
            raise InvalidSpecError("lr_decay_factor must be > 1")
        if self.lr_decay_period_epochs < 1:
            raise InvalidSpecError("lr_decay_period_epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidSpecError("batch_size must be >= 1")
        if self.stop_tol <= 0:
            raise InvalidSpecError("stop_tol must be positive")
        if self.stop_window_epochs < 1:
            raise InvalidSpecError("stop_window_epochs must be >= 1")
        if self.max_epochs < 1:
            raise InvalidSpecError("max_epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidSpecError("momentum must be in [0, 1)")
        if self.loss_alpha != "pooled" and not 0.0 <= float(self.loss_alpha) <= 1.0:
            raise InvalidSpecError("loss_alpha must be in [0, 1] or 'pooled'")


@dataclass
class TrainHistory:
    """Per-epoch record of one training run."""

    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "lrs": self.lrs,
            "stopped_early": self.stopped_early,
        }


class MlpModel:
    """Feed-forward network: ReLU hidden layers, identity scalar output.

    ``weights[i]`` has shape (layer_dims[i], layer_dims[i+1]). ``version``
    increments on every parameter update so that traces recorded before a
    training step cannot silently be reused after it.

    Instances are safe to share across threads for forward/input_gradient;
    training mutates parameters and must have exclusive write access.
    """

    def __init__(
        self,
        layer_dims: list[int],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        rng_seed: int,
    ):
        self.layer_dims = list(layer_dims)
        self.weights = weights
        self.biases = biases
        self.rng_seed = rng_seed
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpModel":
        m = MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.rng_seed,
        )
        m.version = self.version
        return m

    # ------------------------------------------------------------------ #
    # forward / backward

    def forward_batch(
        self, X: np.ndarray, want_trace: bool = False
    ) -> np.ndarray | tuple[np.ndarray, ForwardTrace]:
        """Evaluate the network on a batch X of shape (n, d). Returns (n,)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(
                f"expected inputs of shape (n, {self.input_dim}), got {X.shape}"
            )
        pre: list[np.ndarray] = []
        act: list[np.ndarray] = []
        a = X
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else np.maximum(z, 0.0)
            if want_trace:
                pre.append(z)
                act.append(a)
        y = a[:, 0]
        if want_trace:
            return y, ForwardTrace(X, pre, act, self.version)
        return y

    def forward(self, x: np.ndarray) -> float:
        """Evaluate the network on a single input vector of dimension d."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            raise ShapeError(f"expected input of shape ({self.input_dim},), got {x.shape}")
        return float(self.forward_batch(x[None, :])[0])

    def backward_params(
        self, trace: ForwardTrace, upstream: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Gradients of a scalar loss w.r.t. all weights and biases.

        ``upstream`` holds dLoss/dOutput per sample, shape (n,). The trace
        must come from forward_batch on this model with no parameter update
        in between.
        """
        if trace.model_version != self.version:
            raise StaleTraceError(
                "trace was recorded from an older parameter state; rerun forward"
            )
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (trace.inputs.shape[0],):
            raise ShapeError(
                f"upstream must have shape ({trace.inputs.shape[0]},), got {upstream.shape}"
            )
        grads_w: list[np.ndarray] = [np.empty(0)] * self.n_layers
        grads_b: list[np.ndarray] = [np.empty(0)] * self.n_layers
        delta = upstream[:, None]
        for i in range(self.n_layers - 1, -1, -1):
            a_prev = trace.inputs if i == 0 else trace.activations[i - 1]
            grads_w[i] = a_prev.T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                # ReLU subgradient: 0 at a pre-activation of exactly 0.
                delta = (delta @ self.weights[i].T) * (trace.pre_activations[i - 1] > 0)
        return grads_w, grads_b

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the scalar output w.r.t. the input vector x."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            raise ShapeError(f"expected input of shape ({self.input_dim},), got {x.shape}")
        pre: list[np.ndarray] = []
        a = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = z if i == last else np.maximum(z, 0.0)
        delta = np.ones(1)
        for i in range(last, 0, -1):
            delta = (self.weights[i] @ delta) * (pre[i - 1] > 0)
        return self.weights[0] @ delta

    # ------------------------------------------------------------------ #
    # persistence

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        """Write a checkpoint: JSON header plus raw little-endian float64 blocks.

        The byte layout is fully determined by the model state, so identical
        models produce identical files.
        """
        header = {
            "layer_dims": self.layer_dims,
            "rng_seed": self.rng_seed,
            "version": self.version,
            "extra": extra or {},
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as f:
            f.write(_CHECKPOINT_MAGIC)
            f.write(len(blob).to_bytes(8, "little"))
            f.write(blob)
            for w, b in zip(self.weights, self.biases):
                f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> tuple["MlpModel", dict]:
        """Read a checkpoint written by save(). Returns (model, extra)."""
        with open(path, "rb") as f:
            magic = f.read(len(_CHECKPOINT_MAGIC))
            if magic != _CHECKPOINT_MAGIC:
                raise ParseError(1, "not a model checkpoint (bad magic)")
            n = int.from_bytes(f.read(8), "little")
            header = json.loads(f.read(n).decode())
            dims = [int(d) for d in header["layer_dims"]]
            weights, biases = [], []
            for din, dout in zip(dims[:-1], dims[1:]):
                wb = f.read(din * dout * 8)
                bb = f.read(dout * 8)
                if len(wb) != din * dout * 8 or len(bb) != dout * 8:
                    raise ParseError(1, "checkpoint truncated")
                weights.append(np.frombuffer(wb, dtype="<f8").reshape(din, dout).copy())
                biases.append(np.frombuffer(bb, dtype="<f8").copy())
            if f.read(1):
                raise ParseError(1, "trailing bytes after parameters")
        model = cls(dims, weights, biases, int(header["rng_seed"]))
        model.version = int(header["version"])
        return model, header.get("extra", {})


def init_mlp(layer_dims: list[int], seed: int) -> MlpModel:
    """Build a network with fan-in-scaled uniform weights and zero biases.

    Weights of a layer with fan-in f are drawn from U(-sqrt(6/f), sqrt(6/f)),
    the standard range for ReLU stacks. The same (layer_dims, seed) pair
    always yields bit-identical parameters.
    """
    if len(layer_dims) < 2:
        raise InvalidSpecError("layer_dims needs at least input and output entries")
    if any(int(d) != d or d < 1 for d in layer_dims):
        raise InvalidSpecError(f"layer dimensions must be positive integers: {layer_dims}")
    if layer_dims[-1] != 1:
        raise InvalidSpecError("output dimension must be 1 (scalar regression)")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel([int(d) for d in layer_dims], weights, biases, int(seed))


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Step-decayed learning rate for a given epoch."""
    return cfg.initial_lr / cfg.lr_decay_factor ** (epoch // cfg.lr_decay_period_epochs)


def predict(model: MlpModel, X: np.ndarray, chunk_size: int = 65536) -> np.ndarray:
    """forward_batch in chunks, bounding peak memory on large sets."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] <= chunk_size:
        return model.forward_batch(X)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk_size):
        out[start : start + chunk_size] = model.forward_batch(X[start : start + chunk_size])
    return out


def train(
    model: MlpModel,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    seed: int,
    sample_weight: np.ndarray | None = None,
) -> TrainHistory:
    """Mini-batch SGD on the (optionally weighted) mean squared error, in place.

    The objective is mean_i w_i (Y(x_i) - y_i)^2 with w_i = 1 when
    ``sample_weight`` is None. Batches are consecutive slices of a fresh
    permutation drawn each epoch from a generator seeded with ``seed``, so
    identical inputs and seed reproduce the run bit for bit. Raises
    TrainingDivergedError if the objective stops being finite.
    """
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"expected X of shape (n, {model.input_dim}), got {X.shape}")
    if y.shape != (X.shape[0],):
        raise ShapeError(f"expected y of shape ({X.shape[0]},), got {y.shape}")
    if X.shape[0] == 0:
        raise InvalidSpecError("training data is empty")
    if sample_weight is not None:
        sample_weight = np.asarray(sample_weight, dtype=np.float64)
        if sample_weight.shape != y.shape:
            raise ShapeError("sample_weight must match y")

    n = X.shape[0]
    rng = np.random.default_rng(seed)
    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]
    history = TrainHistory()

    def objective() -> float:
        resid = predict(model, X) - y
        sq = resid * resid
        if sample_weight is not None:
            sq = sq * sample_weight
        return float(np.mean(sq))

    for epoch in range(cfg.max_epochs):
        lr = learning_rate_at(cfg, epoch)
        perm = rng.permutation(n)
        # Divergence is detected by the finiteness check below; suppress the
        # transient overflow warnings on the way there.
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                xb, yb = X[idx], y[idx]
                out, trace = model.forward_batch(xb, want_trace=True)
                upstream = 2.0 * (out - yb) / idx.size
                if sample_weight is not None:
                    upstream = upstream * sample_weight[idx]
                grads_w, grads_b = model.backward_params(trace, upstream)
                for i in range(model.n_layers):
                    if cfg.momentum > 0.0:
                        velocity_w[i] = cfg.momentum * velocity_w[i] - lr * grads_w[i]
                        velocity_b[i] = cfg.momentum * velocity_b[i] - lr * grads_b[i]
                        model.weights[i] += velocity_w[i]
                        model.biases[i] += velocity_b[i]
                    else:
                        model.weights[i] -= lr * grads_w[i]
                        model.biases[i] -= lr * grads_b[i]
                model.version += 1

            loss = objective()
        history.losses.append(loss)
        history.lrs.append(lr)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch)

        w = cfg.stop_window_epochs
        if epoch >= w:
            ref = history.losses[epoch - w]
            change = abs(loss - ref) / max(ref, np.finfo(float).tiny)
            if change < cfg.stop_tol:
                history.stopped_early = True
                break

    return history
