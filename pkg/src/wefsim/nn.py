"""Small numpy MLP with explicit per-layer weights.

Weights are stored as ``(W, b)`` with ``W`` of shape ``(input_dim, output_dim)``
so a layer computes ``x @ W + b``. The final layer is linear; softmax lives in
the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import (PreconditionError, SpecError, TrainingDivergedError,
                     UnsupportedArchitectureError)

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    momentum: float = 0.5
    batch_size: int = 32
    local_epochs: int = 3

    def __post_init__(self):
        if self.learning_rate < 0:
            raise PreconditionError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise PreconditionError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise PreconditionError("batch_size must be positive")
        if self.local_epochs < 1:
            raise PreconditionError("local_epochs must be >= 1")


def mlp_spec(input_dim: int, hidden: list[int] | tuple[int, ...], num_classes: int) -> list[LayerSpec]:
    dims = [input_dim, *hidden, num_classes]
    return [LayerSpec(a, b, "relu" if i < len(dims) - 2 else "identity")
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]


def validate_spec(spec: list[LayerSpec]) -> None:
    if not spec:
        raise SpecError("model spec is empty")
    for i, layer in enumerate(spec):
        if layer.input_dim < 1 or layer.output_dim < 1:
            raise SpecError(f"layer {i} has a non-positive dimension")
        if layer.activation not in ACTIVATIONS:
            raise SpecError(f"layer {i}: unknown activation {layer.activation!r}")
        if i and spec[i - 1].output_dim != layer.input_dim:
            raise SpecError(f"layer {i - 1} output {spec[i - 1].output_dim} does not "
                            f"match layer {i} input {layer.input_dim}")
    if spec[-1].activation != "identity":
        raise SpecError("final layer must use the identity activation")


class ModelWeights:
    """Ordered ``(W, b)`` pairs plus the activation of each layer.

    Supports ``+``, ``-`` and scalar ``*`` elementwise; results are new objects.
    """

    __slots__ = ("layers", "activations")

    def __init__(self, layers, activations):
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in layers]
        self.activations = tuple(activations)
        if len(self.activations) != len(self.layers):
            raise SpecError("one activation per layer is required")

    @property
    def spec(self) -> list[LayerSpec]:
        return [LayerSpec(w.shape[0], w.shape[1], a)
                for (w, _), a in zip(self.layers, self.activations)]

    def shapes(self):
        return [(w.shape, b.shape) for w, b in self.layers]

    def copy(self) -> ModelWeights:
        return ModelWeights([(w.copy(), b.copy()) for w, b in self.layers], self.activations)

    def _check(self, other: ModelWeights) -> None:
        if self.shapes() != other.shapes():
            raise PreconditionError("model shapes differ")

    def __add__(self, other: ModelWeights) -> ModelWeights:
        self._check(other)
        return ModelWeights([(w1 + w2, b1 + b2) for (w1, b1), (w2, b2)
                             in zip(self.layers, other.layers)], self.activations)

    def __sub__(self, other: ModelWeights) -> ModelWeights:
        self._check(other)
        return ModelWeights([(w1 - w2, b1 - b2) for (w1, b1), (w2, b2)
                             in zip(self.layers, other.layers)], self.activations)

    def __mul__(self, c: float) -> ModelWeights:
        return ModelWeights([(w * c, b * c) for w, b in self.layers], self.activations)

    __rmul__ = __mul__

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in self.layers])

    def map(self, fn) -> ModelWeights:
        """Apply ``fn`` to every weight matrix and bias vector."""
        return ModelWeights([(fn(w), fn(b)) for w, b in self.layers], self.activations)

    def equals(self, other: ModelWeights) -> bool:
        """Bitwise equality of all parameters."""
        return self.shapes() == other.shapes() and all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.layers, other.layers))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.layers)

    def __repr__(self) -> str:
        dims = " -> ".join([str(self.layers[0][0].shape[0])] + [str(w.shape[1]) for w, _ in self.layers])
        return f"ModelWeights({dims})"


def init_model(spec: list[LayerSpec], seed: int) -> ModelWeights:
    """Glorot-uniform weights, zero biases."""
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    layers = []
    for layer in spec:
        limit = np.sqrt(6.0 / (layer.input_dim + layer.output_dim))
        w = rng.uniform(-limit, limit, size=(layer.input_dim, layer.output_dim))
        layers.append((w, np.zeros(layer.output_dim)))
    return ModelWeights(layers, [layer.activation for layer in spec])


def _forward(model: ModelWeights, x: np.ndarray):
    pre, post = [], [x]
    h = x
    for (w, b), act in zip(model.layers, model.activations):
        z = h @ w + b
        h = np.maximum(z, 0.0) if act == "relu" else z
        pre.append(z)
        post.append(h)
    return pre, post


def logits(model: ModelWeights, x: np.ndarray) -> np.ndarray:
    return _forward(model, np.asarray(x, dtype=np.float64))[1][-1]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(model: ModelWeights, data: Dataset) -> None:
    if len(data) == 0:
        raise PreconditionError("data is empty")
    if data.dim != model.layers[0][0].shape[0]:
        raise PreconditionError(f"feature dimension {data.dim} does not match "
                                f"model input {model.layers[0][0].shape[0]}")
    if data.class_count > model.layers[-1][0].shape[1]:
        raise PreconditionError("dataset has more classes than model outputs")


def loss(model: ModelWeights, data: Dataset) -> float:
    """Mean softmax cross-entropy."""
    _check_batch(model, data)
    z = logits(model, data.features)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(data)), data.labels].mean())


def _loss_and_grad(model: ModelWeights, x: np.ndarray, y: np.ndarray):
    pre, post = _forward(model, x)
    n = x.shape[0]
    z = post[-1]
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1))
    value = float((lse - zs[np.arange(n), y]).mean())

    delta = _softmax(z)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        w, _ = model.layers[i]
        if model.activations[i] == "relu":
            delta = delta * (pre[i] > 0)
        grads[i] = (post[i].T @ delta, delta.sum(axis=0))
        if i:
            delta = delta @ w.T
    return value, ModelWeights(grads, model.activations)


def gradient(model: ModelWeights, batch: Dataset) -> ModelWeights:
    """Exact gradient of the mean cross-entropy over ``batch``."""
    _check_batch(model, batch)
    return _loss_and_grad(model, batch.features, batch.labels)[1]


def train_local(model: ModelWeights, data: Dataset, cfg: TrainConfig, seed: int,
                round_index: int | None = None, client_id: int | None = None):
    """Mini-batch SGD with momentum for ``cfg.local_epochs`` epochs.

    Returns ``(final, trajectory)`` where ``trajectory[k]`` is the model after
    epoch ``k + 1``. Momentum uses the ``v = mu * v + g; w -= lr * v`` form and
    starts from zero on every call.
    """
    _check_batch(model, data)
    rng = np.random.default_rng(seed)
    ws = [w.copy() for w, _ in model.layers]
    bs = [b.copy() for _, b in model.layers]
    vw = [np.zeros_like(w) for w in ws]
    vb = [np.zeros_like(b) for b in bs]
    n = len(data)
    trajectory = []
    for epoch in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cur = ModelWeights(list(zip(ws, bs)), model.activations)
            value, g = _loss_and_grad(cur, data.features[idx], data.labels[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError("non-finite training loss", round_index,
                                            epoch + 1, client_id)
            for i, (gw, gb) in enumerate(g.layers):
                vw[i] = cfg.momentum * vw[i] + gw
                vb[i] = cfg.momentum * vb[i] + gb
                ws[i] = ws[i] - cfg.learning_rate * vw[i]
                bs[i] = bs[i] - cfg.learning_rate * vb[i]
        snap = ModelWeights([(w.copy(), b.copy()) for w, b in zip(ws, bs)], model.activations)
        if not snap.is_finite():
            raise TrainingDivergedError("non-finite weights", round_index, epoch + 1, client_id)
        trajectory.append(snap)
    return trajectory[-1], trajectory


def predict(model: ModelWeights, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. lowest class on ties
    return np.argmax(logits(model, x), axis=1)


def evaluate_accuracy(model: ModelWeights, data: Dataset) -> float:
    if len(data) == 0:
        raise PreconditionError("data is empty")
    return float(np.mean(predict(model, data.features) == data.labels))


def penultimate_weights(model: ModelWeights) -> np.ndarray:
    """Copy of the weight matrix feeding the output layer's inputs.

    For an ``86 -> 32 -> 2`` MLP this is the ``86 x 32`` first-layer matrix.
    """
    if len(model.layers) < 2:
        raise UnsupportedArchitectureError("model needs at least two layers")
    return model.layers[-2][0].copy()
