"""Small differentiable models with closed-form gradients and local momentum SGD.

Two architectures are supported: multinomial logistic regression and a
one-hidden-layer tanh MLP (tanh keeps the loss smooth everywhere, which the
finite-difference gradient oracle relies on). Parameters live in a single
flat float64 vector so the federation layer can treat every model uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DataError, ParameterError
from .numeric import RngStream, as_vector

ARCHITECTURES = ("logistic", "mlp1")


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ParameterError(f"unknown architecture '{self.architecture}'")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ParameterError("input_dim >= 1 and num_classes >= 2 required")
        if self.architecture == "mlp1" and self.hidden_dim < 1:
            raise ParameterError("mlp1 requires hidden_dim >= 1")

    @property
    def param_count(self) -> int:
        if self.architecture == "logistic":
            return (self.input_dim + 1) * self.num_classes
        return (self.input_dim + 1) * self.hidden_dim + (
            self.hidden_dim + 1
        ) * self.num_classes


@dataclass
class LocalOptState:
    """Per-round local optimizer settings (heavy-ball momentum SGD).

    The momentum buffer is created from zero inside every local_update
    call, i.e. momentum resets at the start of each communication round.
    """

    learning_rate: float
    momentum: float = 0.0
    batch_size: int = 1
    local_steps: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.local_steps < 1:
            raise ParameterError("batch_size and local_steps must be >= 1")


def _unpack_logistic(spec: ModelSpec, params: np.ndarray):
    w_end = spec.input_dim * spec.num_classes
    W = params[:w_end].reshape(spec.input_dim, spec.num_classes)
    b = params[w_end:]
    return W, b


def _unpack_mlp1(spec: ModelSpec, params: np.ndarray):
    i, h, c = spec.input_dim, spec.hidden_dim, spec.num_classes
    sizes = [i * h, h, h * c, c]
    offsets = np.cumsum([0] + sizes)
    W1 = params[offsets[0] : offsets[1]].reshape(i, h)
    b1 = params[offsets[1] : offsets[2]]
    W2 = params[offsets[2] : offsets[3]].reshape(h, c)
    b2 = params[offsets[3] : offsets[4]]
    return W1, b1, W2, b2


def init_params(spec: ModelSpec, stream: RngStream) -> np.ndarray:
    """Deterministic initial parameters: zeros for logistic, scaled normal
    weights (zero biases) for the MLP to break hidden-unit symmetry."""
    if spec.architecture == "logistic":
        return np.zeros(spec.param_count, dtype=np.float64)
    rng = stream.generator()
    params = np.zeros(spec.param_count, dtype=np.float64)
    W1, b1, W2, b2 = _unpack_mlp1(spec, params)
    W1[:] = rng.normal(size=W1.shape) / np.sqrt(spec.input_dim)
    W2[:] = rng.normal(size=W2.shape) / np.sqrt(spec.hidden_dim)
    return params


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(spec: ModelSpec, params: np.ndarray, X: np.ndarray):
    if spec.architecture == "logistic":
        W, b = _unpack_logistic(spec, params)
        return X @ W + b, None
    W1, b1, W2, b2 = _unpack_mlp1(spec, params)
    H = np.tanh(X @ W1 + b1)
    return H @ W2 + b2, H


def loss_and_grad(
    spec: ModelSpec, params: np.ndarray, features: np.ndarray, labels: np.ndarray
):
    """Mean cross-entropy over the batch and its exact gradient."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(X) == 0:
        raise DataError("batch is empty")
    params = as_vector(params)
    if len(params) != spec.param_count:
        raise ParameterError(
            f"params length {len(params)} != expected {spec.param_count}"
        )
    if X.shape[1] != spec.input_dim:
        raise ParameterError(f"batch width {X.shape[1]} != input_dim {spec.input_dim}")
    B = len(X)
    logits, H = _forward(spec, params, X)
    probs = _softmax(logits)
    eps = np.finfo(np.float64).tiny
    loss = float(-np.mean(np.log(probs[np.arange(B), y] + eps)))

    dlogits = probs
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B

    grad = np.empty_like(params)
    if spec.architecture == "logistic":
        w_end = spec.input_dim * spec.num_classes
        grad[:w_end] = (X.T @ dlogits).reshape(-1)
        grad[w_end:] = dlogits.sum(axis=0)
    else:
        W1, b1, W2, b2 = _unpack_mlp1(spec, params)
        gW2 = H.T @ dlogits
        gb2 = dlogits.sum(axis=0)
        dH = (dlogits @ W2.T) * (1.0 - H * H)
        gW1 = X.T @ dH
        gb1 = dH.sum(axis=0)
        i, h = spec.input_dim, spec.hidden_dim
        grad[: i * h] = gW1.reshape(-1)
        grad[i * h : i * h + h] = gb1
        grad[i * h + h : i * h + h + h * spec.num_classes] = gW2.reshape(-1)
        grad[i * h + h + h * spec.num_classes :] = gb2
    return loss, grad


def mean_loss(spec: ModelSpec, params, dataset: Dataset) -> float:
    loss, _ = loss_and_grad(spec, params, dataset.features, dataset.labels)
    return loss


def predict(spec: ModelSpec, params, features: np.ndarray) -> np.ndarray:
    logits, _ = _forward(spec, as_vector(params), np.asarray(features, np.float64))
    return np.argmax(logits, axis=1)


def accuracy(spec: ModelSpec, params, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise DataError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(predict(spec, params, dataset.features) == dataset.labels))


def _batch_indices(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Without-replacement mini-batch schedule, reshuffled every epoch."""
    produced = 0
    while produced < steps:
        perm = rng.permutation(n)
        for lo in range(0, n, batch_size):
            yield perm[lo : lo + batch_size]
            produced += 1
            if produced == steps:
                return


def local_update(
    spec: ModelSpec,
    start: np.ndarray,
    shard: Dataset,
    opt: LocalOptState,
    stream: RngStream,
) -> np.ndarray:
    """Run local_steps momentum-SGD iterations and return start - final.

    The returned vector follows the server convention: subtracting it
    (scaled) from the global model moves the model toward the local one.
    """
    if len(shard) == 0:
        raise DataError("client shard is empty")
    start = as_vector(start)
    params = start.copy()
    velocity = np.zeros_like(params)
    rng = stream.generator()
    for idx in _batch_indices(len(shard), opt.batch_size, opt.local_steps, rng):
        _, grad = loss_and_grad(spec, params, shard.features[idx], shard.labels[idx])
        velocity = opt.momentum * velocity + grad
        params = params - opt.learning_rate * velocity
    return start - params
