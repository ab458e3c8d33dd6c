"""Small dense network in plain numpy: tanh hidden layers, linear output.

Inputs and targets are standardized per dimension (statistics from the
training split only); the loss is the mean squared error in standardized
target units, averaged over samples and output dimensions.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, SchemaError

CHECKPOINT_VERSION = 1
_ACTIVATIONS = {"tanh": np.tanh, "linear": lambda x: x}


def param_count(layer_sizes: Sequence[int]) -> int:
    """Weights plus biases of a dense net with the given layer widths."""
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data) -> tuple["Standardizer", np.ndarray]:
        """Per-column statistics; zero-variance columns get std 1 and are flagged."""
        data = np.asarray(data, dtype=float)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        degenerate = ~(std > 0)
        std = np.where(degenerate, 1.0, std)
        return cls(mean, std), degenerate

    def transform(self, x):
        return (x - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 2000
    early_stop_patience: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs and early_stop_patience must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience must not exceed max_epochs")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_test_loss: float = math.inf
    degenerate_inputs: list[int] = field(default_factory=list)


class Mlp:
    """Dense feed-forward network with standardized inputs and outputs."""

    def __init__(self, layer_sizes: Sequence[int], seed: int = 0,
                 hidden_activation: str = "tanh", output_activation: str = "linear"):
        self.layer_sizes = [int(n) for n in layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        if hidden_activation not in _ACTIVATIONS or output_activation not in _ACTIVATIONS:
            raise ValueError("unknown activation")
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = math.sqrt(3.0 / fan_in)
            self.weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.in_scaler = Standardizer.identity(self.layer_sizes[0])
        self.out_scaler = Standardizer.identity(self.layer_sizes[-1])

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def param_count(self) -> int:
        return param_count(self.layer_sizes)

    def params(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] of the live parameter arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise DimensionMismatch(f"expected {self.n_in} inputs, got {x.shape[-1]}")
        return x

    def _activations(self, z: np.ndarray) -> list[np.ndarray]:
        """Layer outputs for standardized input ``z`` (first entry is ``z``)."""
        acts = [z]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            f = _ACTIVATIONS[self.output_activation if i == last else self.hidden_activation]
            acts.append(f(acts[-1] @ w + b))
        return acts

    def forward_standardized(self, z) -> np.ndarray:
        return self._activations(np.asarray(z, dtype=float))[-1]

    def forward(self, x) -> np.ndarray:
        x = self._check_input(x)
        single = x.ndim == 1
        z = self.in_scaler.transform(np.atleast_2d(x))
        y = self.out_scaler.inverse(self.forward_standardized(z))
        return y[0] if single else y

    __call__ = forward

    def loss(self, x, y) -> float:
        """MSE in standardized target units."""
        x = self._check_input(np.atleast_2d(x))
        t = self.out_scaler.transform(np.atleast_2d(np.asarray(y, dtype=float)))
        r = self.forward_standardized(self.in_scaler.transform(x)) - t
        return float(np.mean(r * r))

    def _grad_std(self, z, t) -> list[np.ndarray]:
        acts = self._activations(z)
        n = z.shape[0] * self.n_out
        delta = 2.0 * (acts[-1] - t) / n
        if self.output_activation == "tanh":
            delta = delta * (1.0 - acts[-1] ** 2)
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[i].T @ delta)
            if i:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        grads.reverse()
        return grads

    def grad(self, x, y) -> list[np.ndarray]:
        """Gradient of :meth:`loss`, aligned with :meth:`params`."""
        x = self._check_input(np.atleast_2d(x))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[-1] != self.n_out or y.shape[0] != x.shape[0]:
            raise DimensionMismatch(f"targets of shape {y.shape} do not match the network")
        if x.shape[0] == 0:
            raise DimensionMismatch("empty batch")
        return self._grad_std(self.in_scaler.transform(x), self.out_scaler.transform(y))

    # persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": CHECKPOINT_VERSION,
            "layer_sizes": self.layer_sizes,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "input_standardizer": {"mean": self.in_scaler.mean.tolist(), "std": self.in_scaler.std.tolist()},
            "output_standardizer": {"mean": self.out_scaler.mean.tolist(), "std": self.out_scaler.std.tolist()},
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Mlp":
        try:
            if obj["schema_version"] != CHECKPOINT_VERSION:
                raise SchemaError(f"unsupported checkpoint version {obj['schema_version']!r}")
            net = cls(obj["layer_sizes"], hidden_activation=obj["hidden_activation"],
                      output_activation=obj["output_activation"])
            net.in_scaler = Standardizer(np.asarray(obj["input_standardizer"]["mean"], dtype=float),
                                         np.asarray(obj["input_standardizer"]["std"], dtype=float))
            net.out_scaler = Standardizer(np.asarray(obj["output_standardizer"]["mean"], dtype=float),
                                          np.asarray(obj["output_standardizer"]["std"], dtype=float))
            weights = [np.asarray(w, dtype=float) for w in obj["weights"]]
            biases = [np.asarray(b, dtype=float) for b in obj["biases"]]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad checkpoint: {exc}") from None
        for i, (a, b) in enumerate(zip(net.layer_sizes[:-1], net.layer_sizes[1:])):
            if weights[i].shape != (a, b) or biases[i].shape != (b,):
                raise SchemaError(f"layer {i} has the wrong shape")
        net.weights, net.biases = weights, biases
        return net

    def copy(self) -> "Mlp":
        return Mlp.from_dict(self.to_dict())


def save_checkpoint(net: Mlp, path, **meta) -> None:
    obj = {"kind": "mlp", **meta, "model": net.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_checkpoint(path) -> Mlp:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed checkpoint: {exc.msg}") from None
    return Mlp.from_dict(obj.get("model", obj))


def forward(model: Mlp, x) -> np.ndarray:
    return model.forward(x)


def grad(model: Mlp, x, y) -> list[np.ndarray]:
    return model.grad(x, y)


def train(model: Mlp, train_set, test_set, config: TrainConfig | None = None):
    """Adam on shuffled mini-batches with early stopping on the test split.

    ``train_set`` and ``test_set`` are ``(x, y)`` pairs.  Standardizers are
    refit on the training split.  The returned model holds the weights of the
    epoch with the lowest test loss.  An empty test split falls back to the
    training loss for checkpointing.
    """
    cfg = config or TrainConfig()
    x_tr = model._check_input(np.atleast_2d(np.asarray(train_set[0], dtype=float)))
    y_tr = np.atleast_2d(np.asarray(train_set[1], dtype=float))
    if y_tr.shape != (x_tr.shape[0], model.n_out):
        raise DimensionMismatch(f"training targets have shape {y_tr.shape}")
    x_te = np.asarray(test_set[0], dtype=float).reshape(-1, model.n_in) if test_set is not None else x_tr[:0]
    y_te = np.asarray(test_set[1], dtype=float).reshape(-1, model.n_out) if test_set is not None else y_tr[:0]
    if x_te.shape[0] == 0:
        x_te, y_te = x_tr, y_tr

    history = TrainHistory()
    model.in_scaler, bad_in = Standardizer.fit(x_tr)
    model.out_scaler, _ = Standardizer.fit(y_tr)
    if bad_in.any():
        history.degenerate_inputs = np.flatnonzero(bad_in).tolist()
        warnings.warn(f"zero-variance input dimensions {history.degenerate_inputs}; std clamped to 1")

    z_tr, t_tr = model.in_scaler.transform(x_tr), model.out_scaler.transform(y_tr)
    z_te, t_te = model.in_scaler.transform(x_te), model.out_scaler.transform(y_te)

    def test_loss():
        r = model.forward_standardized(z_te) - t_te
        return float(np.mean(r * r))

    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    best = [p.copy() for p in params]
    history.best_test_loss = test_loss()
    since_best = 0
    n = z_tr.shape[0]
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = model._grad_std(z_tr[idx], t_tr[idx])
            step += 1
            lr_t = cfg.learning_rate * math.sqrt(1 - b2**step) / (1 - b1**step)
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= lr_t * mi / (np.sqrt(vi) + eps)
        r = model.forward_standardized(z_tr) - t_tr
        history.train_loss.append(float(np.mean(r * r)))
        te = test_loss()
        history.test_loss.append(te)
        if te < history.best_test_loss:
            history.best_test_loss = te
            history.best_epoch = epoch
            best = [p.copy() for p in params]
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    for p, b in zip(params, best):
        p[...] = b
    return model, history


def train_config_from_dict(obj: dict | None) -> TrainConfig:
    return TrainConfig(**(obj or {}))


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
