"""Desk-scale federated learning: dense ReLU networks trained with SGD.

A model is a list of dense layers; the last one feeds a softmax and the
cross-entropy loss. Flattening walks the layers in order, each layer's
weight (row-major, shape ``(fan_in, fan_out)``) followed by its bias.

FedAvg weights clients by ``p_k = M_k / sum_j M_j``.  Inside the contract
every data owner trains on exactly ``M0`` points, so the weights reduce
to the plain mean ``1/N`` applied by the aggregation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NoDataError
from .fixedpoint import RingVector, decode_vector


@dataclass
class Dense:
    name: str
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    def copy(self) -> "Dense":
        return Dense(self.name, self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class ModelParams:
    layers: list[Dense] = field(default_factory=list)

    @property
    def arch(self) -> list[tuple[str, int, int, str]]:
        return [(l.name, *l.shape, l.activation) for l in self.layers]

    @property
    def n_params(self) -> int:
        return sum(l.size for l in self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def copy(self) -> "ModelParams":
        return ModelParams([l.copy() for l in self.layers])

    def flatten(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def unflatten(self, vec) -> "ModelParams":
        """New model with this model's architecture and ``vec`` as parameters."""
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.n_params:
            raise DimensionError(f"expected {self.n_params} parameters, got {vec.size}")
        out, pos = [], 0
        for l in self.layers:
            w = vec[pos:pos + l.weight.size].reshape(l.shape).copy()
            pos += l.weight.size
            b = vec[pos:pos + l.bias.size].copy()
            pos += l.bias.size
            out.append(Dense(l.name, w, b, l.activation))
        return ModelParams(out)

    def equals(self, other: "ModelParams") -> bool:
        return self.arch == other.arch and np.array_equal(self.flatten(), other.flatten())


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    owner: str = ""
    n_classes: int = 10

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise DimensionError(f"bad dataset shapes X{self.X.shape} y{self.y.shape}")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, idx, owner: str | None = None) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.owner if owner is None else owner, self.n_classes)


@dataclass(frozen=True)
class TrainSpec:
    epochs: int
    batch_size: int
    lr: float = 0.05
    seed: int = 0


def init_model(arch: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases; ReLU hidden layers, softmax output.

    ``arch`` lists layer widths including input and output, e.g.
    ``[64, 32, 16, 10]`` is three dense layers.
    """
    arch = [int(a) for a in arch]
    if len(arch) < 2 or min(arch) < 1:
        raise ConfigError(f"architecture needs >= 2 positive widths, got {arch}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(arch[:-1], arch[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        act = "softmax" if i == len(arch) - 2 else "relu"
        layers.append(Dense(f"dense{i + 1}", w, np.zeros(fan_out), act))
    return ModelParams(layers)


def split_model(w: ModelParams, public_layers: int) -> tuple[ModelParams, ModelParams]:
    """(private, public): the public part is the last ``public_layers`` layers."""
    if not 0 <= public_layers <= len(w):
        raise ConfigError(f"public layer count {public_layers} outside [0, {len(w)}]")
    cut = len(w) - public_layers
    w = w.copy()
    return ModelParams(w.layers[:cut]), ModelParams(w.layers[cut:])


def combine(private: ModelParams, public: ModelParams) -> ModelParams:
    layers = [l.copy() for l in private.layers] + [l.copy() for l in public.layers]
    for a, b in zip(layers[:-1], layers[1:]):
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"cannot stack {a.name}{a.shape} before {b.name}{b.shape}")
    return ModelParams(layers)


def public_fraction(w: ModelParams, public_layers: int) -> float:
    _, pub = split_model(w, public_layers)
    return pub.n_params / w.n_params


# -- forward / backward ---------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(w: ModelParams, X: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input first; the last entry holds class probabilities."""
    acts = [np.asarray(X, dtype=np.float64)]
    for l in w.layers:
        if acts[-1].shape[1] != l.shape[0]:
            raise DimensionError(f"{l.name} expects {l.shape[0]} inputs, got {acts[-1].shape[1]}")
        z = acts[-1] @ l.weight + l.bias
        acts.append(_softmax(z) if l.activation == "softmax" else np.maximum(z, 0.0))
    return acts


def loss(w: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    probs = forward(w, X)[-1]
    return float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-300)))


def backprop(w: ModelParams, X: np.ndarray, y: np.ndarray, first: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Mean cross-entropy gradients for layers ``first..`` as (dW, db) pairs."""
    if len(y) == 0:
        raise DataError("empty batch")
    acts = forward(w, X)
    n = len(y)
    delta = acts[-1].copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = []
    for i in range(len(w.layers) - 1, first - 1, -1):
        l = w.layers[i]
        grads.append((acts[i].T @ delta, delta.sum(axis=0)))
        if i > first:
            delta = (delta @ l.weight.T) * (acts[i] > 0)
    grads.reverse()
    return grads


def gradient(w: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Flat gradient of the mean cross-entropy, aligned with ``w.flatten()``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionError(f"batch shapes X{X.shape} y{y.shape} disagree")
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in backprop(w, X, y)])


def _sgd(w: ModelParams, data: Dataset, spec: TrainSpec, first: int) -> ModelParams:
    w = w.copy()
    rng = np.random.default_rng(spec.seed)
    n = len(data)
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            grads = backprop(w, data.X[idx], data.y[idx], first)
            for l, (dW, db) in zip(w.layers[first:], grads):
                l.weight -= spec.lr * dW
                l.bias -= spec.lr * db
    return w


def _check_spec(spec: TrainSpec, n: int) -> None:
    if spec.epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {spec.epochs}")
    if not 1 <= spec.batch_size <= max(n, 1):
        raise ConfigError(f"batch size {spec.batch_size} outside [1, {n}]")


def train(w: ModelParams, data: Dataset, spec: TrainSpec) -> ModelParams:
    """Full-model mini-batch SGD (used by the model owner)."""
    if len(data) == 0:
        raise DataError("cannot train on an empty dataset")
    _check_spec(spec, len(data))
    return _sgd(w, data, spec, 0)


def local_train(
    public: ModelParams,
    frozen_private: ModelParams,
    data: Dataset,
    spec: TrainSpec,
    min_points: int = 1,
) -> ModelParams:
    """Data-owner update: SGD on the public layers stacked on a frozen feature extractor."""
    if len(data) < max(min_points, 1):
        raise DataError(f"{data.owner or 'dataset'} has {len(data)} points, needs {min_points}")
    if spec.epochs < 1:
        raise ConfigError(f"local training needs >= 1 epoch, got {spec.epochs}")
    _check_spec(spec, len(data))
    full = combine(frozen_private, public)
    trained = _sgd(full, data, spec, len(frozen_private))
    return ModelParams(trained.layers[len(frozen_private):])


def apply_update(
    results: Mapping[int, RingVector] | Iterable[RingVector],
    n_per_round: int,
    template: ModelParams | None = None,
):
    """Average of the decoded accepted aggregates (each a ring sum over N models).

    Returns a :class:`ModelParams` shaped like ``template`` or, without a
    template, the flat float vector.
    """
    vecs = list(results.values()) if isinstance(results, Mapping) else list(results)
    if not vecs:
        raise NoDataError("no accepted aggregates")
    dims = {v.dim for v in vecs}
    if len(dims) != 1:
        raise DimensionError(f"aggregate dimensions differ: {sorted(dims)}")
    decoded = np.vstack([decode_vector(v, n_per_round) for v in vecs])
    mean = decoded.sum(axis=0) / len(vecs)
    return mean if template is None else template.unflatten(mean)


def combine_and_adapt(
    private: ModelParams, public: ModelParams, mo_data: Dataset, spec: TrainSpec
) -> ModelParams:
    full = combine(private, public)
    if spec.epochs == 0:
        return full
    return train(full, mo_data, spec)


def predict(w: ModelParams, X: np.ndarray) -> np.ndarray:
    return np.argmax(forward(w, X)[-1], axis=1)


def evaluate(w: ModelParams, testset: Dataset) -> float:
    if len(testset) == 0:
        raise DataError("empty test set")
    return float(np.mean(predict(w, testset.X) == testset.y))
