"""Adam training of an edge scorer under the perturbed Fenchel-Young loss."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InputError, TrainingDivergedError
from .features import Standardizer, correlation_filter
from .fy import PerturbConfig, loss_and_grad
from .models import ModelParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    lr: float = 0.001
    batch_size: int = 1
    val_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError("epochs must be at least 1")
        if not self.lr >= 0:
            raise InputError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise InputError("batch size must be at least 1")
        if not 0 <= self.val_fraction < 1:
            raise InputError("validation fraction must lie in [0, 1)")


@dataclass
class TrainResult:
    params: ModelParams
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    runtime: float = 0.0


def init_model(variant: str, points: Sequence, *, hidden=(32, 32), activation="relu",
               threshold=0.80, seed=0) -> ModelParams:
    """Fits the correlation filter and standardisation on ``points`` and
    returns a fresh model over the retained features."""
    if not points:
        raise InputError("empty training set")
    X = np.vstack([p.rows for p in points])
    retained, flagged = correlation_filter(X, threshold) if len(X) >= 2 else \
        (list(range(X.shape[1])), [])
    if flagged:
        log.info("constant feature columns kept: %s", flagged)
    st = Standardizer.fit(X[:, retained])
    if variant == "lr":
        return ModelParams.linear(len(retained), standardizer=st, retained=retained)
    if variant == "mlp":
        return ModelParams.mlp(len(retained), hidden, activation, seed, standardizer=st,
                               retained=retained)
    raise InputError(f"unknown model variant {variant!r}")


def split(points, fraction, seed):
    idx = np.random.default_rng(seed).permutation(len(points))
    n_val = int(round(fraction * len(points)))
    if n_val >= len(points):
        n_val = len(points) - 1
    return [points[i] for i in idx[n_val:]], [points[i] for i in idx[:n_val]]


def _dataset_loss(params, prepared, pcfg, seed):
    rng = np.random.default_rng(seed)
    total = 0.0
    for g, X, y in prepared:
        theta = params.forward(X)
        Z = rng.standard_normal((pcfg.n_samples, g.n_edges))
        total += loss_and_grad(g, theta, y, pcfg.eps, Z)[0]
    return total / max(1, len(prepared))


def train(points: Sequence, params: ModelParams, tcfg: TrainConfig = TrainConfig(),
          pcfg: PerturbConfig = PerturbConfig(), val_points: Sequence | None = None) -> TrainResult:
    """Minimise the mean perturbed loss; returns the snapshot with the best
    validation loss (training loss if there is no validation split)."""
    t0 = time.perf_counter()
    points = list(points)
    if not points:
        raise InputError("empty training set")
    if val_points is None and tcfg.val_fraction > 0 and len(points) > 1:
        points, val_points = split(points, tcfg.val_fraction, tcfg.seed)
    val_points = list(val_points or [])
    params = params.copy()
    prep = [(p.graph, params.prepare(p.rows), np.asarray(p.y, dtype=float)) for p in points]
    vprep = [(p.graph, params.prepare(p.rows), np.asarray(p.y, dtype=float)) for p in val_points]
    for g, X, y in prep:
        if not g.is_matching(y):
            raise InputError("a training target is not feasible for its decision graph")
    m = [np.zeros_like(W) for W in params.weights] + [np.zeros_like(b) for b in params.biases]
    v = [np.zeros_like(a) for a in m]
    step = 0
    rng = np.random.default_rng(tcfg.seed)
    res = TrainResult(params.copy())
    best = math.inf
    L = len(params.weights)
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(prep))
        zrng = np.random.default_rng([pcfg.seed, epoch])
        ep_loss = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            gW = [np.zeros_like(W) for W in params.weights]
            gb = [np.zeros_like(b) for b in params.biases]
            for i in batch:
                g, X, y = prep[i]
                theta, cache = params.forward(X, keep=True)
                Z = zrng.standard_normal((pcfg.n_samples, g.n_edges))
                loss, dtheta = loss_and_grad(g, theta, y, pcfg.eps, Z)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, sample {int(i)}; "
                        f"max |theta| = {np.max(np.abs(theta)):.3g}")
                ep_loss += loss
                dW, db = params.backward(cache, dtheta)
                for k in range(L):
                    gW[k] += dW[k] / len(batch)
                    gb[k] += db[k] / len(batch)
            step += 1
            grads = gW + gb
            tensors = params.weights + params.biases
            b1, b2 = tcfg.beta1, tcfg.beta2
            for k, (p, gk) in enumerate(zip(tensors, grads)):
                m[k] = b1 * m[k] + (1 - b1) * gk
                v[k] = b2 * v[k] + (1 - b2) * gk * gk
                mh = m[k] / (1 - b1 ** step)
                vh = v[k] / (1 - b2 ** step)
                p -= tcfg.lr * mh / (np.sqrt(vh) + tcfg.adam_eps)
        ep_loss /= len(prep)
        res.train_loss.append(ep_loss)
        score = _dataset_loss(params, vprep, pcfg, pcfg.seed + 1) if vprep else ep_loss
        if vprep:
            res.val_loss.append(score)
        if not math.isfinite(score):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        if score < best:
            best = score
            res.params = params.copy()
            res.best_epoch = epoch
    res.runtime = time.perf_counter() - t0
    res.params.meta = dict(res.params.meta, best_epoch=res.best_epoch, epochs=tcfg.epochs,
                           lr=tcfg.lr, eps=pcfg.eps, n_samples=pcfg.n_samples)
    return res
