"""Frozen black-box classifiers.

The training code only ever calls two things on a classifier:

* ``predict_score(x) -> float`` in the open interval (0, 1)
* ``input_gradient(x) -> ndarray`` of shape ``(dim,)``, the gradient of the
  score with respect to the input

Any object with those two methods and a ``dim`` attribute can be debiased.
``CallableClassifier`` wraps a pair of plain functions, which is the
simplest way to plug in an external model. Reference logistic and MLP
models are provided so the package is self-contained.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .errors import InvalidInput, TrainingFailure
from .serialization import read_params, write_params

SCORE_MIN = 1e-7
SCORE_MAX = 1.0 - 1e-7


@runtime_checkable
class ClassifierHandle(Protocol):
    dim: int

    def predict_score(self, x) -> float: ...

    def input_gradient(self, x) -> np.ndarray: ...


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_x(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,) or x.ndim > 2:
        raise InvalidInput(f"expected input with {dim} features, got shape {x.shape}")
    return x


def bce_and_residual(y, r):
    """Binary cross-entropy and its derivative in the score, ``(r - y) / (r (1 - r))``."""
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    loss = -(y * np.log(r) + (1.0 - y) * np.log1p(-r))
    residual = (r - y) / (r * (1.0 - r))
    if loss.ndim == 0:
        return float(loss), float(residual)
    return loss, residual


def predict_scores(handle, X) -> np.ndarray:
    """Score a batch; falls back to a per-sample loop for minimal handles."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    batch = getattr(handle, "predict_scores", None)
    if batch is not None:
        return np.asarray(batch(X), dtype=float)
    return np.array([handle.predict_score(x) for x in X])


def input_gradients(handle, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    batch = getattr(handle, "input_gradients", None)
    if batch is not None:
        return np.asarray(batch(X), dtype=float)
    return np.array([handle.input_gradient(x) for x in X])


class _ReferenceModel:
    """Shared plumbing for the built-in models: flat parameters, freezing, I/O."""

    kind = ""

    def __init__(self, dim: int, params, frozen: bool = False):
        self.dim = int(dim)
        self._params = np.array(params, dtype=float)
        self.frozen = frozen

    @property
    def params(self) -> np.ndarray:
        view = self._params.view()
        view.flags.writeable = False
        return view

    def set_params(self, params) -> None:
        if self.frozen:
            raise TrainingFailure("classifier is frozen")
        self._params = np.array(params, dtype=float)

    def freeze(self):
        self.frozen = True
        return self

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self._params, dtype="<f8").tobytes()).hexdigest()

    def predict_score(self, x) -> float:
        x = _check_x(x, self.dim)
        if x.ndim != 1:
            raise InvalidInput("predict_score takes a single sample")
        return float(self.predict_scores(x[None, :])[0])

    def input_gradient(self, x) -> np.ndarray:
        x = _check_x(x, self.dim)
        if x.ndim != 1:
            raise InvalidInput("input_gradient takes a single sample")
        return self.input_gradients(x[None, :])[0]

    def predict_scores(self, X) -> np.ndarray:
        X = _check_x(np.atleast_2d(X), self.dim)
        return np.clip(_sigmoid(self._logits(X)[0]), SCORE_MIN, SCORE_MAX)


class LogisticModel(_ReferenceModel):
    """``sigmoid(w @ x + b)``; parameters stored as ``[w..., b]``."""

    kind = "logistic"

    def __init__(self, dim: int, params=None, frozen: bool = False):
        super().__init__(dim, np.zeros(dim + 1) if params is None else params, frozen)

    @classmethod
    def from_weights(cls, w, b: float = 0.0, frozen: bool = True) -> "LogisticModel":
        w = np.asarray(w, dtype=float)
        return cls(w.size, np.append(w, b), frozen)

    def _logits(self, X):
        return X @ self._params[:-1] + self._params[-1], None

    def input_gradients(self, X) -> np.ndarray:
        X = _check_x(np.atleast_2d(X), self.dim)
        p = _sigmoid(self._logits(X)[0])
        return (p * (1.0 - p))[:, None] * self._params[:-1][None, :]

    def loss_and_grad(self, X, y):
        z, _ = self._logits(X)
        p = np.clip(_sigmoid(z), SCORE_MIN, SCORE_MAX)
        loss = float(np.mean(bce_and_residual(y, p)[0]))
        dz = (_sigmoid(z) - y) / len(y)
        return loss, np.append(X.T @ dz, dz.sum())


class MLPModel(_ReferenceModel):
    """Tanh hidden layers with a sigmoid head."""

    kind = "mlp"

    def __init__(self, dim: int, widths=(20, 20), params=None, frozen: bool = False):
        self.widths = tuple(int(w) for w in widths)
        sizes = [dim, *self.widths, 1]
        self._shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self._shapes += [(fan_in, fan_out), (fan_out,)]
        count = sum(int(np.prod(s)) for s in self._shapes)
        super().__init__(dim, np.zeros(count) if params is None else params, frozen)
        if self._params.size != count:
            raise InvalidInput(f"expected {count} parameters, got {self._params.size}")

    @classmethod
    def init(cls, dim: int, widths=(20, 20), seed: int = 0) -> "MLPModel":
        rng = np.random.default_rng(seed)
        model = cls(dim, widths)
        for arr in model._views(model._params):
            if arr.ndim == 2:
                arr[...] = rng.normal(0.0, np.sqrt(1.0 / arr.shape[0]), size=arr.shape)
        return model

    def _views(self, flat):
        out, start = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            out.append(flat[start : start + size].reshape(shape))
            start += size
        return out

    def _logits(self, X):
        layers = self._views(self._params)
        acts = [X]
        h = X
        for k in range(0, len(layers) - 2, 2):
            h = np.tanh(h @ layers[k] + layers[k + 1])
            acts.append(h)
        return (h @ layers[-2] + layers[-1])[:, 0], acts

    def _backward(self, dz, acts, grads=None):
        layers = self._views(self._params)
        g = dz[:, None]
        for k in reversed(range(0, len(layers), 2)):
            if grads is not None:
                grads[k] += acts[k // 2].T @ g
                grads[k + 1] += g.sum(axis=0)
            g = g @ layers[k].T
            if k > 0:
                g = g * (1.0 - acts[k // 2] ** 2)
        return g

    def input_gradients(self, X) -> np.ndarray:
        X = _check_x(np.atleast_2d(X), self.dim)
        z, acts = self._logits(X)
        p = _sigmoid(z)
        return self._backward(p * (1.0 - p), acts)

    def loss_and_grad(self, X, y):
        z, acts = self._logits(X)
        p = np.clip(_sigmoid(z), SCORE_MIN, SCORE_MAX)
        loss = float(np.mean(bce_and_residual(y, p)[0]))
        grad = np.zeros_like(self._params)
        self._backward((_sigmoid(z) - y) / len(y), acts, self._views(grad))
        return loss, grad


class CallableClassifier:
    """Adapter for external models: supply the score and input-gradient functions."""

    def __init__(self, dim: int, predict: Callable, gradient: Callable):
        self.dim = int(dim)
        self._predict = predict
        self._gradient = gradient

    def predict_score(self, x) -> float:
        x = _check_x(x, self.dim)
        return float(np.clip(self._predict(x), SCORE_MIN, SCORE_MAX))

    def input_gradient(self, x) -> np.ndarray:
        x = _check_x(x, self.dim)
        return np.asarray(self._gradient(x), dtype=float).reshape(self.dim)


def predict_score(h, x) -> float:
    return h.predict_score(x)


def input_gradient(h, x) -> np.ndarray:
    return h.input_gradient(x)


def train_baseline(dataset, arch="mlp", epochs: int = 200, lr: float = 0.1, seed: int = 0,
                   widths=(20, 20)):
    """Full-batch gradient descent on BCE; returns a frozen model.

    ``arch`` is ``"logistic"`` or ``"mlp"`` (hidden ``widths``, tanh).
    """
    X = np.asarray(dataset.features, dtype=float)
    y = np.asarray(dataset.labels, dtype=float)
    if len(y) == 0:
        raise InvalidInput("cannot train on an empty dataset")
    dim = X.shape[1]
    if arch == "logistic":
        model = LogisticModel(dim)
    elif arch == "mlp":
        model = MLPModel.init(dim, widths, seed)
    else:
        raise InvalidInput(f"unknown architecture {arch!r}")
    params = model._params.copy()
    for _ in range(epochs):
        loss, grad = model.loss_and_grad(X, y)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingFailure(f"baseline training diverged (loss={loss})")
        params -= lr * grad
        model.set_params(params)
    return model.freeze()


def save_classifier(model: _ReferenceModel, path) -> None:
    header = {"dim": model.dim}
    if isinstance(model, MLPModel):
        header["widths"] = list(model.widths)
    write_params(path, model.kind, header, model._params)


def load_classifier(path) -> _ReferenceModel:
    kind, header, params = read_params(path)
    if kind == "logistic":
        return LogisticModel(header["dim"], params, frozen=True)
    if kind == "mlp":
        return MLPModel(header["dim"], header["widths"], params, frozen=True)
    raise InvalidInput(f"{path}: expected a classifier file, found {kind!r}")
