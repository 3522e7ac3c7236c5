"""Perturbed Fenchel-Young loss over the matching layer.

For scores ``theta`` and target decision ``y'``::

    loss = mean_m max_y (theta + eps * Z_m) . y  -  theta . y'
    grad = mean_m argmax_y (theta + eps * Z_m)  -  y'

with ``Z_m`` standard normal. Loss and gradient drawn from the same seed use
the same ``Z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from ..matching import DecisionGraph, solve_matching_batch


@dataclass(frozen=True)
class PerturbConfig:
    eps: float = 1.0
    n_samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise InputError("perturbation amplitude must be positive")
        if self.n_samples < 1:
            raise InputError("need at least one perturbation sample")


def _check(graph: DecisionGraph, theta, y_true):
    theta = np.asarray(theta, dtype=float)
    y_true = np.asarray(y_true)
    if theta.shape != (graph.n_edges,):
        raise InputError("score vector does not match the decision graph")
    if not graph.is_matching(y_true):
        raise InputError("target decision is not feasible for the decision graph")
    return theta, y_true.astype(float)


def draw(cfg: PerturbConfig, n_edges: int, rng=None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return rng.standard_normal((cfg.n_samples, n_edges))


def loss_and_grad(graph: DecisionGraph, theta, y_true, eps: float, Z):
    """Loss and gradient for given perturbation draws ``Z`` (shape (M, |E|))."""
    P = theta[None, :] + eps * Z
    Y = solve_matching_batch(graph, P)
    loss = float(np.mean(np.sum(P * Y, axis=1)) - theta @ y_true)
    grad = Y.mean(axis=0) - y_true
    return loss, grad


def fy_loss(theta, graph: DecisionGraph, y_true, cfg: PerturbConfig | None = None) -> float:
    """Monte-Carlo perturbed loss; ``cfg=None`` evaluates the unperturbed limit."""
    theta, y_true = _check(graph, theta, y_true)
    if cfg is None:
        return loss_and_grad(graph, theta, y_true, 0.0, np.zeros((1, graph.n_edges)))[0]
    return loss_and_grad(graph, theta, y_true, cfg.eps, draw(cfg, graph.n_edges))[0]


def fy_gradient(theta, graph: DecisionGraph, y_true, cfg: PerturbConfig | None = None):
    theta, y_true = _check(graph, theta, y_true)
    if cfg is None:
        return loss_and_grad(graph, theta, y_true, 0.0, np.zeros((1, graph.n_edges)))[1]
    return loss_and_grad(graph, theta, y_true, cfg.eps, draw(cfg, graph.n_edges))[1]
