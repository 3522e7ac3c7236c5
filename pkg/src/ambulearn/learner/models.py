"""Linear and multilayer-perceptron edge scorers with hand-written gradients.

Both share one representation: a list of dense layers ``(W, b)`` applied to
each feature row. A linear model is a single layer; an MLP applies the
activation after every layer except the last. The final layer has one
output, the edge score.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from .features import Standardizer

ACTIVATIONS = ("relu", "identity")


@dataclass
class ModelParams:
    variant: str  # "lr" or "mlp"
    weights: list[np.ndarray]  # W_l with shape (out, in)
    biases: list[np.ndarray]
    activation: str = "relu"
    standardizer: Standardizer | None = None
    retained: list[int] | None = None  # feature columns kept by the correlation filter
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in ("lr", "mlp"):
            raise InputError(f"unknown model variant {self.variant!r}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InputError("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise InputError(f"layer {i} has inconsistent shapes")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise InputError(f"layer {i} input does not chain to layer {i - 1}")
        if self.weights[-1].shape[0] != 1:
            raise InputError("the last layer must produce one score")

    @property
    def n_inputs(self):
        return self.weights[0].shape[1]

    # -- construction ---------------------------------------------------------
    @classmethod
    def linear(cls, n_inputs, intercept=0.0, coef=None, **kw):
        coef = np.zeros(n_inputs) if coef is None else np.asarray(coef, dtype=float)
        return cls("lr", [coef.reshape(1, n_inputs).copy()], [np.array([float(intercept)])],
                   activation="identity", **kw)

    @classmethod
    def mlp(cls, n_inputs, hidden=(32, 32), activation="relu", seed=0, **kw):
        rng = np.random.default_rng(seed)
        sizes = [n_inputs, *hidden, 1]
        Ws, bs = [], []
        for a, b in zip(sizes, sizes[1:]):
            Ws.append(rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a)))
            bs.append(np.zeros(b))
        return cls("mlp", Ws, bs, activation=activation, **kw)

    def copy(self):
        return ModelParams(self.variant, [W.copy() for W in self.weights],
                           [b.copy() for b in self.biases], self.activation, self.standardizer,
                           None if self.retained is None else list(self.retained), dict(self.meta))

    # -- inference ------------------------------------------------------------
    def prepare(self, rows):
        """Select retained columns and standardise raw feature rows."""
        X = np.asarray(rows, dtype=float)
        if X.ndim != 2:
            raise InputError("feature rows must be a matrix")
        if self.retained is not None:
            X = X[:, self.retained]
        if self.standardizer is not None:
            X = self.standardizer(X)
        return X

    def forward(self, X, keep=False):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise InputError(f"expected {self.n_inputs} features, got shape {X.shape}")
        acts, pre = [X], []
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            pre.append(z)
            if i < last and self.activation == "relu":
                h = np.maximum(z, 0.0)
            else:
                h = z
            acts.append(h)
        theta = h[:, 0]
        return (theta, (acts, pre)) if keep else theta

    def backward(self, cache, dtheta):
        """Gradients of ``sum(dtheta * theta)`` w.r.t. every layer."""
        acts, pre = cache
        g = np.asarray(dtheta, dtype=float).reshape(-1, 1)
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last and self.activation == "relu":
                g = g * (pre[i] > 0)
            gW[i] = g.T @ acts[i]
            gb[i] = g.sum(axis=0)
            if i:
                g = g @ self.weights[i]
        return gW, gb

    def predict_theta(self, rows):
        return self.forward(self.prepare(rows))

    # -- serialisation ---------------------------------------------------------
    def to_json(self):
        return {
            "variant": self.variant,
            "activation": self.activation,
            "layers": [{"shape": list(W.shape), "weights": W.ravel().tolist(),
                        "bias": b.tolist()} for W, b in zip(self.weights, self.biases)],
            "standardizer": None if self.standardizer is None else self.standardizer.to_json(),
            "retained": self.retained,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d):
        Ws = [np.asarray(l["weights"], dtype=float).reshape(l["shape"]) for l in d["layers"]]
        bs = [np.asarray(l["bias"], dtype=float) for l in d["layers"]]
        st = d.get("standardizer")
        return cls(d["variant"], Ws, bs, d.get("activation", "relu"),
                   None if st is None else Standardizer.from_json(st), d.get("retained"),
                   d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def predict_theta(params: ModelParams, rows) -> np.ndarray:
    return params.predict_theta(rows)
