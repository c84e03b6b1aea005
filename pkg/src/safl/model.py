"""Desk-scale classifier trained by the clients.

The model is either softmax regression (``hidden_dim == 0``) or a single
ReLU hidden layer followed by a softmax output. Parameters live in one flat
float64 vector with a fixed layout, layer by layer::

    [W1 (input_dim x width, row-major), b1 (width), W2 ..., b2 ...]

so that updates can be exchanged and aggregated as plain vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import DimensionError, PreconditionError
from .linalg import as_vector

__all__ = [
    "ModelArch",
    "ModelState",
    "LocalTrainConfig",
    "Evaluation",
    "init_model",
    "zero_model",
    "forward_loss",
    "gradient",
    "local_train",
    "evaluate",
]


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1 or self.hidden_dim < 0:
            raise PreconditionError(f"invalid architecture {self}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.hidden_dim == 0:
            return [(self.input_dim, self.num_classes)]
        return [(self.input_dim, self.hidden_dim), (self.hidden_dim, self.num_classes)]

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def unflatten(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split a flat vector into ``(W, b)`` views, one pair per layer."""
        if params.shape != (self.num_params,):
            raise DimensionError(
                f"expected {self.num_params} parameters, got shape {params.shape}"
            )
        layers = []
        pos = 0
        for fan_in, fan_out in self.layer_shapes:
            w = params[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = params[pos : pos + fan_out]
            pos += fan_out
            layers.append((w, b))
        return layers

    @staticmethod
    def flatten(layers) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


@dataclass(frozen=True)
class ModelState:
    arch: ModelArch
    params: np.ndarray

    def __post_init__(self):
        params = as_vector(self.params)
        if params.size != self.arch.num_params:
            raise DimensionError(
                f"params length {params.size} != {self.arch.num_params} for {self.arch}"
            )
        if not np.all(np.isfinite(params)):
            raise PreconditionError("model parameters must be finite")
        params = params.copy()
        params.flags.writeable = False
        object.__setattr__(self, "params", params)

    def with_params(self, params) -> "ModelState":
        return ModelState(self.arch, params)


@dataclass(frozen=True)
class LocalTrainConfig:
    learning_rate: float = 0.25
    batch_size: int = 16
    local_steps: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise PreconditionError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.local_steps < 1:
            raise PreconditionError("batch_size and local_steps must be positive")


class Evaluation(NamedTuple):
    loss: float
    accuracy: float
    confusion: np.ndarray


def init_model(arch: ModelArch, seed: int) -> ModelState:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in arch.layer_shapes:
        s = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-s, s, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return ModelState(arch, ModelArch.flatten(layers))


def zero_model(arch: ModelArch) -> ModelState:
    return ModelState(arch, np.zeros(arch.num_params))


def _check_batch(arch: ModelArch, X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise PreconditionError(f"batch must be a non-empty 2-D array, got shape {X.shape}")
    if X.shape[1] != arch.input_dim:
        raise DimensionError(f"feature dim {X.shape[1]} != input_dim {arch.input_dim}")
    if y.shape != (X.shape[0],):
        raise DimensionError("labels must be a 1-D array matching the batch size")
    if not np.issubdtype(y.dtype, np.integer):
        raise PreconditionError("labels must be integers")
    if y.min() < 0 or y.max() >= arch.num_classes:
        raise PreconditionError(f"labels must lie in [0, {arch.num_classes})")
    return X, y.astype(np.intp)


def _forward(layers, X):
    """Return logits plus the hidden activations needed for backprop."""
    if len(layers) == 1:
        w, b = layers[0]
        return X @ w + b, None
    (w1, b1), (w2, b2) = layers
    pre = X @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ w2 + b2, (pre, hidden)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(m: ModelState, X, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and per-example class probabilities."""
    X, y = _check_batch(m.arch, X, y)
    logits, _ = _forward(m.arch.unflatten(m.params), X)
    logp = _log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(len(y)), y]))
    return loss, np.exp(logp)


def gradient(m: ModelState, X, y) -> np.ndarray:
    """Analytic gradient of the mean cross-entropy, in the flat layout."""
    X, y = _check_batch(m.arch, X, y)
    layers = m.arch.unflatten(m.params)
    logits, cache = _forward(layers, X)
    n = X.shape[0]
    dlogits = np.exp(_log_softmax(logits))
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    if cache is None:
        return ModelArch.flatten([(X.T @ dlogits, dlogits.sum(axis=0))])
    pre, hidden = cache
    w2 = layers[1][0]
    dhidden = (dlogits @ w2.T) * (pre > 0)
    return ModelArch.flatten(
        [
            (X.T @ dhidden, dhidden.sum(axis=0)),
            (hidden.T @ dlogits, dlogits.sum(axis=0)),
        ]
    )


def local_train(w_global: ModelState, X, y, cfg: LocalTrainConfig, seed: int) -> np.ndarray:
    """Run ``cfg.local_steps`` SGD steps from ``w_global`` and return the delta.

    Minibatches are drawn without replacement from a fresh permutation each
    epoch. Indices inside a batch are sorted, so a full-size batch always
    reduces in the same order whatever the seed.
    """
    X, y = _check_batch(w_global.arch, X, y)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    params = w_global.params.copy()
    arch = w_global.arch
    order = np.empty(0, dtype=np.intp)
    pos = 0
    for _ in range(cfg.local_steps):
        if cfg.batch_size >= n:
            idx = np.arange(n)
        else:
            if pos + cfg.batch_size > n or order.size == 0:
                order = rng.permutation(n)
                pos = 0
            idx = np.sort(order[pos : pos + cfg.batch_size])
            pos += cfg.batch_size
        g = gradient(ModelState(arch, params), X[idx], y[idx])
        params -= cfg.learning_rate * g
    return params - w_global.params


def predict_proba(m: ModelState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.arch.input_dim:
        raise DimensionError(f"expected (n, {m.arch.input_dim}) features, got {X.shape}")
    logits, _ = _forward(m.arch.unflatten(m.params), X)
    return np.exp(_log_softmax(logits))


def predict(m: ModelState, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties.
    return np.argmax(predict_proba(m, X), axis=1)


def evaluate(m: ModelState, X, y) -> Evaluation:
    X, y = _check_batch(m.arch, X, y)
    loss, proba = forward_loss(m, X, y)
    pred = np.argmax(proba, axis=1)
    k = m.arch.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return Evaluation(loss, float(np.trace(confusion)) / len(y), confusion)
