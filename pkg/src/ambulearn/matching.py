"""Combinatorial layer: maximum-weight bipartite matching over a decision graph.

Left vertices are ambulances, right vertices are requests. A matching may
leave vertices unmatched unless they are flagged mandatory. Among optimal
matchings the one whose sorted edge-index list is lexicographically smallest
is returned.

Every decision graph produced by the event engine is a star (one emergency
with several idle ambulances, or one freed ambulance with several waiting
locations). Stars are solved by an argmax, which also vectorises over a batch
of perturbed score vectors; general graphs go through the assignment kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InfeasibleError, InputError
from .kernels import max_weight_assignment
from .simulator import DISPATCH, REDEPLOY

TIE_TOL = 1e-9
ENUM_LIMIT = 512


@dataclass
class DecisionGraph:
    left: list  # ambulance ids
    right: list  # request ids
    edges: list[tuple[int, int]]  # (left index, right index)
    mandatory_left: list[bool] = field(default_factory=list)
    mandatory_right: list[bool] = field(default_factory=list)
    actions: list = field(default_factory=list)  # simulator action per edge, if any

    def __post_init__(self):
        nl, nr = len(self.left), len(self.right)
        if not self.mandatory_left:
            self.mandatory_left = [False] * nl
        if not self.mandatory_right:
            self.mandatory_right = [False] * nr
        if len(self.mandatory_left) != nl or len(self.mandatory_right) != nr:
            raise InputError("mandatory flags do not match the vertex counts")
        for l, r in self.edges:
            if not (0 <= l < nl and 0 <= r < nr):
                raise InputError(f"edge ({l}, {r}) references a missing vertex")
        if len(set(self.edges)) != len(self.edges):
            raise InputError("parallel edges are not allowed")

    @property
    def n_edges(self):
        return len(self.edges)

    def star_center(self):
        """``('left'|'right', index)`` when every edge shares one mandatory
        vertex, else None."""
        if not self.edges:
            return None
        ls = {l for l, _ in self.edges}
        rs = {r for _, r in self.edges}
        n_mand = sum(self.mandatory_left) + sum(self.mandatory_right)
        if n_mand != 1:
            return None
        if len(rs) == 1 and self.mandatory_right[next(iter(rs))]:
            return ("right", next(iter(rs)))
        if len(ls) == 1 and self.mandatory_left[next(iter(ls))]:
            return ("left", next(iter(ls)))
        return None

    def is_matching(self, y) -> bool:
        y = np.asarray(y)
        if y.shape != (self.n_edges,) or not np.isin(y, (0, 1)).all():
            return False
        lc = [0] * len(self.left)
        rc = [0] * len(self.right)
        for e in np.flatnonzero(y):
            l, r = self.edges[e]
            lc[l] += 1
            rc[r] += 1
        if any(c > 1 for c in lc + rc):
            return False
        if any(m and c != 1 for m, c in zip(self.mandatory_left, lc)):
            return False
        return all(c == 1 for m, c in zip(self.mandatory_right, rc) if m)

    def decision(self, y):
        """Simulator action selected by ``y``."""
        idx = np.flatnonzero(np.asarray(y))
        if len(idx) != 1 or not self.actions:
            raise ContractError("decision vector does not select a single action")
        return self.actions[int(idx[0])]


def build_decision_graph(sim, state) -> DecisionGraph:
    """Decision graph of the engine's feasible actions at ``state``."""
    actions = [a for a in sim.feasible_actions(state) if a.kind in (DISPATCH, REDEPLOY)]
    if not actions:
        raise ContractError("no decision to take: the request joins the queue")
    if state.is_dispatch_epoch:
        actions.sort(key=lambda a: a.ambulance)
        left = [a.ambulance for a in actions]
        r = state.batch[0]
        return DecisionGraph(left, [r.id], [(i, 0) for i in range(len(left))],
                             [False] * len(left), [True], actions)
    actions.sort(key=lambda a: a.target)
    right = [a.request.id for a in actions]
    return DecisionGraph([state.decider], right, [(0, i) for i in range(len(right))],
                         [True], [False] * len(right), actions)


# -- general solver --------------------------------------------------------------
def _restricted_best(g: DecisionGraph, theta, allowed, forced):
    """Best value over matchings containing ``forced`` and otherwise using
    only ``allowed`` edges; -inf if no such matching exists."""
    used_l = {g.edges[e][0] for e in forced}
    used_r = {g.edges[e][1] for e in forced}
    if len(used_l) < len(forced) or len(used_r) < len(forced):
        return -np.inf
    base = float(sum(theta[e] for e in forced))
    L = [i for i in range(len(g.left)) if i not in used_l]
    R = [j for j in range(len(g.right)) if j not in used_r]
    nl, nr = len(L), len(R)
    n = nl + nr
    if n == 0:
        return base
    big = 4.0 * (1.0 + float(np.abs(theta).sum())) * (n + 1)
    w = np.full((n, n), -big)
    li = {v: i for i, v in enumerate(L)}
    ri = {v: j for j, v in enumerate(R)}
    real = np.zeros((n, n), dtype=bool)
    for e in allowed:
        l, r = g.edges[e]
        if l in li and r in ri:
            w[li[l], ri[r]] = theta[e]
            real[li[l], ri[r]] = True
    for i, l in enumerate(L):
        if not g.mandatory_left[l]:
            w[i, nr + i] = 0.0
            real[i, nr + i] = True
    for j, r in enumerate(R):
        if not g.mandatory_right[r]:
            w[nl + j, j] = 0.0
            real[nl + j, j] = True
    w[nl:, nr:] = 0.0
    real[nl:, nr:] = True
    cols = max_weight_assignment(w)
    rows = np.arange(n)
    if not real[rows, cols].all():
        return -np.inf
    return base + float(w[rows, cols].sum())


def _tied(a, b):
    return a >= b - TIE_TOL * max(1.0, abs(b))


def _solve_general(g: DecisionGraph, theta) -> np.ndarray:
    E = g.n_edges
    allowed = list(range(E))
    opt = _restricted_best(g, theta, allowed, [])
    if opt == -np.inf:
        raise InfeasibleError("mandatory vertices cannot all be matched")
    chosen: list[int] = []
    last = -1
    while True:
        # the chosen prefix alone is the smallest continuation if it is optimal
        if _tied(_restricted_best(g, theta, [], chosen), opt):
            break
        for e in range(last + 1, E):
            rest = [f for f in range(e + 1, E)]
            if _tied(_restricted_best(g, theta, rest, chosen + [e]), opt):
                chosen.append(e)
                last = e
                break
        else:  # pragma: no cover - guarded by the optimum existing
            raise ContractError("lexicographic tie-break lost the optimum")
    y = np.zeros(E, dtype=np.int8)
    y[chosen] = 1
    return y


# -- star fast path ----------------------------------------------------------------
def _star_choice(theta: np.ndarray) -> np.ndarray:
    """Index of the best edge for each row of ``theta`` (first on ties)."""
    return np.argmax(theta, axis=-1)


def solve_matching(g: DecisionGraph, theta) -> np.ndarray:
    """0/1 edge vector maximising ``theta @ y`` over feasible matchings."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (g.n_edges,):
        raise InputError(f"score vector has shape {theta.shape}, expected ({g.n_edges},)")
    if not np.isfinite(theta).all():
        raise InputError("scores must be finite")
    if g.star_center() is not None:
        y = np.zeros(g.n_edges, dtype=np.int8)
        y[_star_choice(theta)] = 1
        return y
    if g.n_edges == 0:
        if any(g.mandatory_left) or any(g.mandatory_right):
            raise InfeasibleError("mandatory vertices cannot all be matched")
        return np.zeros(0, dtype=np.int8)
    return _solve_general(g, theta)


def enumerate_matchings(g: DecisionGraph, limit: int = ENUM_LIMIT) -> np.ndarray | None:
    """Every feasible matching as 0/1 rows, in lexicographic order of their
    sorted edge lists; None when there are more than ``limit``."""
    E = g.n_edges
    out: list[list[int]] = []
    used_l, used_r = set(), set()
    need_l = [l for l, m in enumerate(g.mandatory_left) if m]
    need_r = [r for r, m in enumerate(g.mandatory_right) if m]

    def rec(start, chosen):
        if len(out) > limit:
            return
        if all(l in used_l for l in need_l) and all(r in used_r for r in need_r):
            out.append(list(chosen))
        for e in range(start, E):
            l, r = g.edges[e]
            if l in used_l or r in used_r:
                continue
            used_l.add(l)
            used_r.add(r)
            chosen.append(e)
            rec(e + 1, chosen)
            chosen.pop()
            used_l.discard(l)
            used_r.discard(r)

    rec(0, [])
    if len(out) > limit:
        return None
    Y = np.zeros((len(out), E), dtype=np.int8)
    for i, S in enumerate(out):
        Y[i, S] = 1
    return Y


def solve_matching_batch(g: DecisionGraph, thetas) -> np.ndarray:
    """Row-wise :func:`solve_matching` for a ``(k, |E|)`` score matrix.

    Small general graphs enumerate their matchings once and score every row
    with one matrix product.
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 2 or thetas.shape[1] != g.n_edges:
        raise InputError("score matrix must have one column per edge")
    if g.star_center() is not None:
        y = np.zeros(thetas.shape, dtype=np.int8)
        y[np.arange(len(thetas)), _star_choice(thetas)] = 1
        return y
    if not len(thetas):
        return np.zeros((0, g.n_edges), dtype=np.int8)
    Y = enumerate_matchings(g) if len(thetas) > 1 else None
    if Y is None:
        return np.stack([solve_matching(g, t) for t in thetas])
    if not len(Y):
        raise InfeasibleError("mandatory vertices cannot all be matched")
    vals = thetas @ Y.T
    best = vals.max(axis=1, keepdims=True)
    tied = vals >= best - TIE_TOL * np.maximum(1.0, np.abs(best))
    return Y[np.argmax(tied, axis=1)]


def matching_value(theta, y) -> float:
    return float(np.dot(np.asarray(theta, dtype=float), np.asarray(y)))
