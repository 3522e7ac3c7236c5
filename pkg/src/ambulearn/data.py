"""Training-set construction from offline solutions.

* :func:`slice_solution` turns one offline schedule into one point per
  decision epoch by replaying the optimal decisions.
* :func:`build_anticipative` samples points from the optimal-rollout pool.
* :func:`build_enhanced` adds points at states reached by non-optimal
  policies, labelled by a residual offline solve.
* :func:`dagger` aggregates expert labels on states visited by a mixture of
  the expert and the current learned policy.
"""
from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Request, ScenarioConfig
from .errors import AmbulearnError, ContractError, InfeasibleError, InputError
from .learner.features import FeatureContext, edge_features
from .learner.fy import PerturbConfig
from .learner.policy import LearnedPolicy
from .learner.training import TrainConfig, init_model, train
from .matching import DecisionGraph, build_decision_graph
from .offline.solver import OfflineSolution, solve_residual
from .simulator import REDEPLOY, Simulator

log = logging.getLogger(__name__)

OPTIMAL = "optimal-rollout"
SUBOPTIMAL = "suboptimal-rollout"
DAGGER = "dagger"


@dataclass
class TrainingPoint:
    graph: DecisionGraph
    rows: np.ndarray
    y: np.ndarray
    provenance: str = OPTIMAL
    policy: str | None = None
    epoch: int | None = None  # decision-epoch index the state was drawn at
    episode: str = ""
    clock: float = 0.0
    digest: str = ""

    @property
    def label(self) -> int:
        return int(np.flatnonzero(self.y)[0])

    def to_json(self):
        return {
            "episode": self.episode, "clock": self.clock, "digest": self.digest,
            "provenance": self.provenance, "policy": self.policy, "epoch": self.epoch,
            "graph": {
                "left": [str(v) for v in self.graph.left],
                "right": [str(v) for v in self.graph.right],
                "edges": [list(e) for e in self.graph.edges],
                "mandatory_left": self.graph.mandatory_left,
                "mandatory_right": self.graph.mandatory_right,
                "actions": [list(a.key) for a in self.graph.actions],
            },
            "rows": self.rows.tolist(),
            "y": [int(i) for i in np.flatnonzero(self.y)],
        }

    @classmethod
    def from_json(cls, d):
        g = d["graph"]
        graph = DecisionGraph(g["left"], g["right"], [tuple(e) for e in g["edges"]],
                              g["mandatory_left"], g["mandatory_right"])
        y = np.zeros(len(graph.edges), dtype=np.int8)
        y[d["y"]] = 1
        return cls(graph, np.asarray(d["rows"], dtype=float).reshape(len(graph.edges), -1), y,
                   d["provenance"], d.get("policy"), d.get("epoch"), d.get("episode", ""),
                   d.get("clock", 0.0), d.get("digest", ""))


def save_points(points, path):
    with open(path, "w") as f:
        for p in points:
            f.write(json.dumps(p.to_json()) + "\n")


def load_points(path):
    with open(path) as f:
        return [TrainingPoint.from_json(json.loads(line)) for line in f if line.strip()]


@dataclass
class Episode:
    """One request stream with its scenario and (optionally) its offline
    solution."""

    scenario: ScenarioConfig
    requests: Sequence[Request]
    offline: OfflineSolution | None = None
    name: str = ""

    def simulator(self):
        return Simulator(self.scenario, self.requests)


def make_point(sim, state, action, ctx, **meta) -> TrainingPoint:
    g = build_decision_graph(sim, state)
    if action not in g.actions:
        raise ContractError("labelled decision is not an edge of the decision graph")
    y = np.zeros(g.n_edges, dtype=np.int8)
    y[g.actions.index(action)] = 1
    return TrainingPoint(g, edge_features(sim, state, g, ctx), y, clock=state.clock,
                         digest=state.digest(), **meta)


def _next_use(decisions):
    """For each decision index, whether the redeployed ambulance is dispatched
    again later in the schedule."""
    used = [True] * len(decisions)
    later: set = set()
    for i in range(len(decisions) - 1, -1, -1):
        kind, amb, _ = decisions[i]
        if kind == REDEPLOY:
            used[i] = amb in later
            later.discard(amb)
        else:
            later.add(amb)
    return used


def slice_solution(offline: OfflineSolution, scenario: ScenarioConfig,
                   requests: Sequence[Request], ctx: FeatureContext, *, episode: str = "",
                   skip_idle_tail: bool = True, skip_cooldown: bool = True) -> list[TrainingPoint]:
    """One training point per decision epoch of the optimal schedule.

    The state at each epoch is rebuilt by replaying the earlier optimal
    decisions. With ``skip_idle_tail`` redeployments of ambulances that never
    serve another emergency are not emitted (every waiting location is then
    optimal, so the label carries no information). With ``skip_cooldown``
    epochs at or after ``horizon - cooldown`` are not emitted either.
    """
    sim = Simulator(scenario, requests)
    state = sim.initial_state()
    decisions = [tuple(d) for d in offline.decisions]
    informative = _next_use(decisions)
    cutoff = scenario.horizon - scenario.cooldown if skip_cooldown else float("inf")
    points = []
    for i, want in enumerate(decisions):
        if state.terminal:
            raise ContractError("replay finished before the offline decisions ran out")
        acts = sim.feasible_actions(state)
        match = [a for a in acts if a.key == want]
        if not match:
            raise ContractError(f"replay diverged from the offline solution at decision {i}")
        act = match[0]
        keep = state.clock < cutoff and (informative[i] or not skip_idle_tail)
        if keep:
            points.append(make_point(sim, state, act, ctx, provenance=OPTIMAL, epoch=i,
                                     episode=episode))
        state = sim.step(state, act, check=False)
    if not state.terminal:
        raise ContractError("offline decisions end before the episode does")
    if abs(state.total_response - offline.total_response) > 1e-6 * max(1.0, offline.total_response):
        raise ContractError("replayed objective differs from the offline objective")
    return points


def build_anticipative(pool: Sequence[TrainingPoint], n: int, seed: int = 0) -> list[TrainingPoint]:
    """Uniform sample of ``n`` points without replacement."""
    if n > len(pool):
        raise InputError(f"requested {n} points from a pool of {len(pool)}")
    idx = random.Random(seed).sample(range(len(pool)), n)
    return [pool[i] for i in sorted(idx)]


def decision_states(sim: Simulator, policy, stop: int | None = None):
    """States at the decision epochs of a policy rollout (up to ``stop``)."""
    if hasattr(policy, "reset"):
        policy.reset(0)
    state = sim.initial_state()
    out = []
    while not state.terminal and (stop is None or len(out) <= stop):
        out.append(state)
        acts = sim.feasible_actions(state)
        state = sim.step(state, acts[policy(sim, state, acts)], check=False)
    return out


def label_state(sim, state, node_limit=None):
    """Expert decision at ``state``: first decision of the residual offline
    solution."""
    sol = solve_residual(sim, state, node_limit=node_limit)
    want = sol.decisions[0]
    for a in sim.feasible_actions(state):
        if a.key == tuple(want):
            return a, sol
    raise ContractError("residual solution starts with an infeasible decision")


def informative(sol: OfflineSolution) -> bool:
    """False when the first decision redeploys an ambulance that the residual
    schedule never dispatches again (all waiting locations tie)."""
    return bool(sol.decisions) and _next_use([tuple(d) for d in sol.decisions])[0]


def build_enhanced(episodes: Sequence[Episode], pool: Sequence[TrainingPoint], n_opt: int,
                   n_subopt: int, policies: Sequence, ctx: FeatureContext, *, seed: int = 0,
                   node_limit: int | None = None, max_retries: int = 20,
                   skip_cooldown: bool = True) -> list[TrainingPoint]:
    """Optimal-rollout sample plus ``n_subopt`` points at states reached by
    randomly drawn non-optimal policies."""
    if n_subopt and not policies:
        raise InputError("the non-optimal policy pool is empty")
    out = build_anticipative(pool, n_opt, seed)
    rng = random.Random(seed + 1)
    for _ in range(n_subopt):
        for attempt in range(max_retries):
            ep = episodes[rng.randrange(len(episodes))]
            pol = policies[rng.randrange(len(policies))]
            sim = ep.simulator()
            states = decision_states(sim, pol)
            cutoff = ep.scenario.horizon - ep.scenario.cooldown if skip_cooldown else float("inf")
            cand = [i for i, s in enumerate(states) if s.clock < cutoff]
            if not cand:
                continue
            t = cand[rng.randrange(len(cand))]
            try:
                act, sol = label_state(sim, states[t], node_limit)
            except InfeasibleError:
                continue
            if not informative(sol):
                continue
            out.append(make_point(sim, states[t], act, ctx, provenance=SUBOPTIMAL,
                                  policy=getattr(pol, "name", type(pol).__name__), epoch=t,
                                  episode=ep.name))
            break
        else:
            raise InfeasibleError("could not draw a state with a feasible residual problem")
    return out


@dataclass
class DaggerResult:
    params: object
    points: list[TrainingPoint]
    sizes: list[int] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)
    skipped: int = 0


class _Mixture:
    """Expert with probability ``alpha`` per transition, learner otherwise.
    Records the expert label of every visited state."""

    def __init__(self, alpha, learner, ctx, rng, node_limit, episode):
        self.alpha, self.learner, self.ctx, self.rng = alpha, learner, ctx, rng
        self.node_limit = node_limit
        self.episode = episode
        self.points: list[TrainingPoint] = []
        self.skipped = 0
        self.expert_time = 0.0

    def __call__(self, sim, state, actions):
        t0 = time.perf_counter()
        sol = None
        try:
            expert, sol = label_state(sim, state, self.node_limit)
        except AmbulearnError:
            expert = None
            self.skipped += 1
        self.expert_time += time.perf_counter() - t0
        if expert is not None and informative(sol):
            self.points.append(make_point(sim, state, expert, self.ctx, provenance=DAGGER,
                                          episode=self.episode))
        if expert is not None and (self.learner is None or self.rng.random() < self.alpha):
            return actions.index(expert)
        if self.learner is None:
            return 0
        return self.learner(sim, state, actions)


def dagger(episodes: Sequence[Episode], ctx: FeatureContext, *, iterations: int = 5,
           alphas: Callable[[int], float] | Sequence[float] | None = None, variant: str = "mlp",
           tcfg: TrainConfig = TrainConfig(), pcfg: PerturbConfig = PerturbConfig(),
           budget: int | None = None, seed: int = 0, node_limit: int | None = None,
           hidden=(32, 32), skip_cooldown: bool = True) -> DaggerResult:
    """Dataset aggregation with mixing weight ``alpha_i`` (default 0.5**(i-1)).

    Each iteration rolls episodes with the mixture policy, labels every visited
    decision state with the expert decision, aggregates, and retrains from
    scratch. ``budget`` caps the total number of points, split evenly over the
    iterations.
    """
    if iterations < 1:
        raise InputError("need at least one iteration")
    if alphas is None:
        alphas = [0.5 ** i for i in range(iterations)]
    elif callable(alphas):
        alphas = [alphas(i + 1) for i in range(iterations)]
    alphas = list(alphas)
    rng = random.Random(seed)
    res = DaggerResult(None, [])
    learner = None
    per_iter = None if budget is None else max(1, budget // iterations)
    for it in range(iterations):
        t0 = time.perf_counter()
        new: list[TrainingPoint] = []
        expert_time = 0.0
        order = list(range(len(episodes)))
        rng.shuffle(order)
        for k in order:
            if per_iter is not None and len(new) >= per_iter:
                break
            ep = episodes[k]
            mix = _Mixture(alphas[it], learner, ctx, rng, node_limit, ep.name)
            sim = ep.simulator()
            state = sim.initial_state()
            while not state.terminal:
                acts = sim.feasible_actions(state)
                state = sim.step(state, acts[mix(sim, state, acts)], check=False)
                if per_iter is not None and len(new) + len(mix.points) >= per_iter:
                    break
            cutoff = ep.scenario.horizon - ep.scenario.cooldown if skip_cooldown else float("inf")
            new.extend(p for p in mix.points if p.clock < cutoff)
            res.skipped += mix.skipped
            expert_time += mix.expert_time
        if per_iter is not None:
            new = new[:per_iter]
        if res.skipped:
            log.warning("expert failed on %d visited states", res.skipped)
        res.points.extend(new)
        res.sizes.append(len(res.points))
        t1 = time.perf_counter()
        params = init_model(variant, res.points, hidden=hidden, seed=seed)
        tr = train(res.points, params, tcfg, pcfg)
        learner = LearnedPolicy(tr.params, ctx)
        res.params = tr.params
        res.timings.append({"iteration": it + 1, "alpha": alphas[it], "collect_s": t1 - t0,
                            "expert_s": expert_time, "train_s": time.perf_counter() - t1,
                            "points": len(res.points)})
    return res
