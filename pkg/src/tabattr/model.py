"""One-hidden-layer ReLU network, trained with plain mini-batch gradient descent.

Binary problems use a single sigmoid output unit, multiclass problems a
softmax layer. Attribution methods explain *class logits*: for softmax these
are the raw output units, for the sigmoid model class 1 has logit ``z`` and
class 0 has logit ``-z`` (the log-odds of each class).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .numerics import ParameterError, Rng, ShapeError

SIGMOID = "sigmoid-binary"
SOFTMAX = "softmax-multiclass"

FORMAT_TAG = "tabattr-mlp 1"


class TrainingError(RuntimeError):
    pass


class Predictor(Protocol):
    """Anything KernelSHAP and the ablation harness can query."""

    def predict_proba(self, batch: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class TrainConfig:
    hidden_units: int = 32
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.hidden_units < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ParameterError(f"invalid training config {self}")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class MLPModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    output_kind: str = SIGMOID
    loss_history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        m, h = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[0] != h or self.b2.shape != (self.W2.shape[1],):
            raise ShapeError("inconsistent MLP parameter shapes")
        c_out = self.W2.shape[1]
        if self.output_kind == SIGMOID and c_out != 1:
            raise ShapeError("a sigmoid model has exactly one output unit")
        if self.output_kind == SOFTMAX and c_out < 2:
            raise ShapeError("a softmax model needs at least two output units")
        if self.output_kind not in (SIGMOID, SOFTMAX):
            raise ParameterError(f"unknown output kind {self.output_kind!r}")
        for p in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(p)):
                raise ValueError("MLP parameters must be finite")

    def __eq__(self, other):
        if not isinstance(other, MLPModel):
            return NotImplemented
        return self.output_kind == other.output_kind and all(
            np.array_equal(p, q) for p, q in zip(self.params, other.params))

    __hash__ = None

    @property
    def params(self) -> tuple[np.ndarray, ...]:
        return self.W1, self.b1, self.W2, self.b2

    @property
    def n_features(self) -> int:
        return self.W1.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return 2 if self.output_kind == SIGMOID else self.W2.shape[1]

    def _check(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def hidden_pre(self, X) -> np.ndarray:
        return self._check(X) @ self.W1 + self.b1

    def logits(self, X) -> np.ndarray:
        """Raw output units, shape (n, C_out)."""
        return np.maximum(self.hidden_pre(X), 0.0) @ self.W2 + self.b2

    def head(self, c: int) -> tuple[np.ndarray, float]:
        """Output weights and bias of class ``c``'s logit."""
        if not 0 <= c < self.n_classes:
            raise ParameterError(f"class index {c} out of range for {self.n_classes} classes")
        if self.output_kind == SIGMOID:
            sign = 1.0 if c == 1 else -1.0
            return sign * self.W2[:, 0], sign * float(self.b2[0])
        return self.W2[:, c], float(self.b2[c])

    def class_logit(self, X, c: int) -> np.ndarray:
        w, b = self.head(c)
        return np.maximum(self.hidden_pre(X), 0.0) @ w + b

    def predict_proba(self, X) -> np.ndarray:
        z = self.logits(X)
        if self.output_kind == SIGMOID:
            p = _sigmoid(z[:, 0])
            return np.column_stack([1.0 - p, p])
        return _softmax(z)

    def predict_class(self, X) -> np.ndarray:
        z = self.logits(X)
        if self.output_kind == SIGMOID:
            return (z[:, 0] > 0.0).astype(int)
        # argmax returns the first maximum: ties go to the lower class
        return z.argmax(axis=1)

    def input_gradients(self, X, c: int) -> np.ndarray:
        """d class_logit_c / dx for every row of ``X`` (ReLU derivative 0 at 0)."""
        w, _ = self.head(c)
        active = (self.hidden_pre(X) > 0.0).astype(float)
        return (active * w) @ self.W1.T


def logits(model: MLPModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("logits() takes a single observation")
    return model.logits(x)[0]


def predict_proba(model: MLPModel, batch) -> np.ndarray:
    return model.predict_proba(batch)


def predict_class(model: MLPModel, batch) -> np.ndarray:
    return model.predict_class(batch)


def input_gradient(model: MLPModel, x, class_index: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("input_gradient() takes a single observation")
    return model.input_gradients(x, class_index)[0]


def init_model(n_features: int, n_classes: int, hidden_units: int, rng: Rng) -> MLPModel:
    """He-scaled normal weights, zero biases."""
    c_out = 1 if n_classes == 2 else n_classes
    W1 = rng.split("W1").normal(0.0, np.sqrt(2.0 / n_features), size=(n_features, hidden_units))
    W2 = rng.split("W2").normal(0.0, np.sqrt(1.0 / hidden_units), size=(hidden_units, c_out))
    kind = SIGMOID if n_classes == 2 else SOFTMAX
    return MLPModel(W1, np.zeros(hidden_units), W2, np.zeros(c_out), kind)


def _loss_and_grads(params, X, y, kind, need_grads=True):
    W1, b1, W2, b2 = params
    pre = X @ W1 + b1
    hidden = np.maximum(pre, 0.0)
    z = hidden @ W2 + b2
    n = X.shape[0]
    if kind == SIGMOID:
        zz = z[:, 0]
        # log(1 + exp(-|z|)) form keeps the loss finite for large logits
        loss = float(np.mean(np.maximum(zz, 0) - zz * y + np.log1p(np.exp(-np.abs(zz)))))
        dz = (_sigmoid(zz) - y)[:, None] / n
    else:
        shifted = z - z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(logsum - shifted[np.arange(n), y]))
        dz = _softmax(z)
        dz[np.arange(n), y] -= 1.0
        dz /= n
    if not need_grads:
        return loss, None
    gW2 = hidden.T @ dz
    gb2 = dz.sum(axis=0)
    dh = (dz @ W2.T) * (pre > 0.0)
    gW1 = X.T @ dh
    gb1 = dh.sum(axis=0)
    return loss, (gW1, gb1, gW2, gb2)


def train(dataset, config: TrainConfig = TrainConfig()) -> MLPModel:
    """Fit the network on ``dataset``'s training split.

    The returned model carries ``loss_history``: the full training-set loss
    before the first epoch followed by the loss after each epoch.
    """
    X = dataset.X_train
    y = dataset.y_train
    if len(y) == 0:
        raise ParameterError("training split is empty")
    n_classes = dataset.n_classes
    if y.min() < 0 or y.max() >= n_classes:
        raise ParameterError("labels out of range")
    rng = Rng(config.seed)
    model = init_model(X.shape[1], n_classes, config.hidden_units, rng.split("init"))
    params = [model.W1.copy(), model.b1.copy(), model.W2.copy(), model.b2.copy()]
    kind = model.output_kind

    history = [_loss_and_grads(params, X, y, kind, need_grads=False)[0]]
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            _run_epoch(params, X, y, kind, config, rng, epoch)
            loss = _loss_and_grads(params, X, y, kind, need_grads=False)[0]
            if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingError(f"training diverged at epoch {epoch}")
            history.append(loss)
    return MLPModel(*params, output_kind=kind, loss_history=tuple(history))


def _run_epoch(params, X, y, kind, config, rng, epoch):
    order = rng.split("epoch", epoch).permutation(len(y))
    for start in range(0, len(y), config.batch_size):
        batch = order[start:start + config.batch_size]
        _, grads = _loss_and_grads(params, X[batch], y[batch], kind)
        for p, g in zip(params, grads):
            p -= config.learning_rate * g


def save_model(model: MLPModel, path) -> None:
    """Write parameters as text; see the README for the layout."""
    def line(tag, arr):
        return tag + " " + " ".join(repr(float(v)) for v in np.ravel(arr)) + "\n"

    m, h = model.W1.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_TAG + "\n")
        fh.write(f"output_kind {model.output_kind}\n")
        fh.write(f"shape {m} {h} {model.W2.shape[1]}\n")
        fh.write(line("W1", model.W1))
        fh.write(line("b1", model.b1))
        fh.write(line("W2", model.W2))
        fh.write(line("b2", model.b2))


def load_model(path) -> MLPModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path}: not a model file")
    fields = {}
    for ln in lines[1:]:
        tag, _, rest = ln.partition(" ")
        fields[tag] = rest.split()
    m, h, c = (int(v) for v in fields["shape"])

    def arr(tag, shape):
        values = np.array([float(v) for v in fields[tag]])
        if values.size != int(np.prod(shape)):
            raise ValueError(f"{path}: {tag} has {values.size} values, expected shape {shape}")
        return values.reshape(shape)

    return MLPModel(arr("W1", (m, h)), arr("b1", (h,)), arr("W2", (h, c)), arr("b2", (c,)),
                    output_kind=fields["output_kind"][0])
