import math
import random

import numpy as np
import pytest

from ambulearn.errors import InputError
from ambulearn.learner.fy import PerturbConfig, draw, fy_gradient, fy_loss, loss_and_grad
from ambulearn.matching import DecisionGraph, solve_matching

PAIR = DecisionGraph([0, 1], [0], [(0, 0), (1, 0)], [False, False], [True])
E1 = np.array([1, 0])


def test_unperturbed_loss():
    assert fy_loss([1.0, 0.0], PAIR, E1) == 0.0
    assert fy_loss([0.0, 1.0], PAIR, E1) == 1.0


def test_unperturbed_gradient():
    assert fy_gradient([0.0, 1.0], PAIR, E1).tolist() == [-1.0, 1.0]


def test_tiny_eps_at_matched_argmax_has_zero_gradient():
    g = fy_gradient([2.0, 0.0], PAIR, E1, PerturbConfig(eps=1e-6, n_samples=100))
    assert np.allclose(g, 0.0)


def test_infeasible_target_rejected():
    with pytest.raises(InputError):
        fy_loss([0.0, 0.0], PAIR, [1, 1])
    with pytest.raises(InputError):
        PerturbConfig(eps=0.0)
    with pytest.raises(InputError):
        PerturbConfig(n_samples=0)


def test_seeded_determinism_and_common_draws():
    cfg = PerturbConfig(1.0, 200, seed=4)
    assert fy_loss([0.3, 0.1], PAIR, E1, cfg) == fy_loss([0.3, 0.1], PAIR, E1, cfg)
    Z = draw(cfg, 2)
    loss, grad = loss_and_grad(PAIR, np.array([0.3, 0.1]), E1.astype(float), 1.0, Z)
    assert loss == fy_loss([0.3, 0.1], PAIR, E1, cfg)
    assert np.array_equal(grad, fy_gradient([0.3, 0.1], PAIR, E1, cfg))


def test_closed_form_two_exclusive_edges():
    M = 100_000
    cfg = PerturbConfig(1.0, M, seed=1)
    Z = draw(cfg, 2)
    se = Z.max(axis=1).std(ddof=1) / math.sqrt(M)
    assert abs(fy_loss([0.0, 0.0], PAIR, E1, cfg) - 1 / math.sqrt(math.pi)) <= 3 * se
    g = fy_gradient([0.0, 0.0], PAIR, E1, cfg)
    sd = math.sqrt(0.25 / M)
    assert abs(g[0] + 0.5) <= 3 * sd and abs(g[1] - 0.5) <= 3 * sd


def _exact_pair_loss(theta, eps=1.0):
    """E[max(t1 + eps Z1, t2 + eps Z2)] - t1 for target edge 1."""
    from math import erf, exp, pi, sqrt
    t1, t2 = theta
    s = eps * sqrt(2.0)
    d = t1 - t2
    Phi = 0.5 * (1 + erf(d / s / sqrt(2)))
    phi = exp(-0.5 * (d / s) ** 2) / sqrt(2 * pi)
    return t2 + d * Phi + s * phi - t1


def test_nonnegativity_and_convexity():
    rng = random.Random(0)
    for _ in range(50):
        a = np.array([rng.gauss(0, 2), rng.gauss(0, 2)])
        b = np.array([rng.gauss(0, 2), rng.gauss(0, 2)])
        lam = rng.random()
        la, lb = _exact_pair_loss(a), _exact_pair_loss(b)
        assert la >= 0 and lb >= 0
        assert _exact_pair_loss(lam * a + (1 - lam) * b) <= lam * la + (1 - lam) * lb + 1e-12
        cfg = PerturbConfig(1.0, 4000, seed=rng.randrange(1000))
        Z = draw(cfg, 2)
        mc = fy_loss(a, PAIR, E1, cfg)
        se = (np.max(a + Z, axis=1)).std(ddof=1) / math.sqrt(4000)
        assert mc >= -3 * se
        assert abs(mc - la) <= 4 * se


def random_three_edge_graph(rng):
    while True:
        nl, nr = rng.randint(1, 3), rng.randint(1, 3)
        pairs = [(l, r) for l in range(nl) for r in range(nr)]
        if len(pairs) < 3:
            continue
        edges = rng.sample(pairs, 3)
        g = DecisionGraph(list(range(nl)), list(range(nr)), edges,
                          [rng.random() < 0.3 for _ in range(nl)],
                          [rng.random() < 0.5 for _ in range(nr)])
        theta = np.array([rng.gauss(0, 1) for _ in range(3)])
        try:
            y = solve_matching(g, np.array([rng.gauss(0, 1) for _ in range(3)]))
        except Exception:
            continue
        return g, theta, y


def test_gradient_matches_finite_differences():
    rng = random.Random(7)
    cfg = PerturbConfig(1.0, 10_000, seed=3)
    for _ in range(20):
        g, theta, y = random_three_edge_graph(rng)
        grad = fy_gradient(theta, g, y, cfg)
        h = 1e-4
        fd = np.array([(fy_loss(theta + h * e, g, y, cfg) - fy_loss(theta - h * e, g, y, cfg)) / (2 * h)
                       for e in np.eye(3)])
        # a zero gradient (single feasible matching) leaves only rounding noise in fd
        assert np.linalg.norm(fd - grad) <= 0.05 * max(np.linalg.norm(grad), 1e-6)
