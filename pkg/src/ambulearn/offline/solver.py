"""Exact full-information solver: depth-first branch-and-bound over the
decision epochs of the event engine, restricted to the arcs of a dispatching
digraph.

The bound adds, for every emergency not yet dispatched, the cheapest travel
time from any location an ambulance could occupy when serving it (plus the
unavoidable wait of requests already queued). Among optimal schedules the one
with the lexicographically smallest decision key is returned, so labels are
deterministic regardless of exploration order.
"""
from __future__ import annotations

import logging
import math
import sys
import time
from dataclasses import dataclass, field

from ..core import RequestKind
from ..errors import AmbulearnError, InfeasibleError, InputError
from ..simulator import DISPATCH, DROP, REDEPLOY, Simulator, SystemState
from .bnb import Budget, BranchAndBound
from .digraph import SINK, SOURCE, DispatchDigraph, arc_terms, tag_str

log = logging.getLogger(__name__)

TOL = 1e-6


@dataclass
class OfflineSolution:
    objective: float
    total_response: float
    served: int
    decisions: list[tuple]
    key: tuple
    schedules: list[list] = field(default_factory=list)
    dropped: list = field(default_factory=list)
    paths: list[list[tuple]] | None = None
    alpha: dict | None = None
    beta: dict | None = None
    optimal: bool = True
    nodes: int = 0
    runtime: float = 0.0
    gamma: float | None = None

    @property
    def selected_arcs(self):
        if self.paths is None:
            return None
        return sorted({(u, v) for p in self.paths for u, v in zip(p, p[1:])}, key=repr)

    @property
    def first_decision(self):
        return self.decisions[0] if self.decisions else None

    def to_json(self):
        out = {
            "objective": self.objective,
            "total_response": self.total_response,
            "served": self.served,
            "dropped": list(self.dropped),
            "decisions": [list(d) for d in self.decisions],
            "key": list(self.key),
            "optimal": self.optimal,
            "nodes": self.nodes,
            "runtime_s": self.runtime,
            "gamma": self.gamma,
            "schedules": [
                [{"request": e.request_id, "kind": e.kind.value, "entry": e.entry_time,
                  "dispatch": e.dispatch_time, "response": e.response_time,
                  "completion": e.completion_time} for e in sched]
                for sched in self.schedules
            ],
        }
        if self.paths is not None:
            out["paths"] = [[tag_str(v) for v in p] for p in self.paths]
            out["arcs"] = [
                {"from": tag_str(u), "to": tag_str(v), "alpha": self.alpha[(u, v)],
                 "beta": self.beta[(u, v)]}
                for (u, v) in self.selected_arcs
            ]
        return out


    @classmethod
    def from_json(cls, d):
        """Decision-level view of a saved solution (schedules are not restored)."""
        return cls(d["objective"], d["total_response"], d["served"],
                   [tuple(x) for x in d["decisions"]], tuple(d["key"]),
                   dropped=list(d.get("dropped", [])), optimal=d.get("optimal", True),
                   nodes=d.get("nodes", 0), runtime=d.get("runtime_s", 0.0),
                   gamma=d.get("gamma"))

def redeploy_index(request_id) -> int:
    return int(str(request_id).rsplit("/w", 1)[1])


def encode(action, fleet_size: int) -> int:
    """Canonical rank of a decision within its epoch: drop < ambulance ids <
    queue for arrivals, waiting-location index for redeployments."""
    if action.kind == DISPATCH:
        return action.ambulance
    if action.kind == REDEPLOY:
        return action.target
    if action.kind == DROP:
        return -1
    return fleet_size


def rollout(sim: Simulator, state: SystemState, policy):
    """Run ``policy`` from ``state``; returns (leaf, key, decisions) or None
    when it gets stuck."""
    fleet = sim.scenario.fleet_size
    key, path = [], []
    try:
        while not state.terminal:
            actions = sim.feasible_actions(state)
            if not actions:
                return None
            act = actions[policy(sim, state, actions)]
            key.append(encode(act, fleet))
            path.append(act.key)
            state = sim.step(state, act, check=False)
    except AmbulearnError:
        return None
    return None if state.dead else (state, tuple(key), path)


def incumbents(sim: Simulator, state: SystemState, gamma=None):
    """Benchmark rollouts used as the initial incumbent, best first."""
    from ..benchmarks import CICS, CIFS

    pols = [CICS()]
    try:
        pols.append(CIFS.for_scenario(sim.scenario))
    except AmbulearnError:
        pass
    runs = [r for r in (rollout(sim, state, p) for p in pols) if r is not None]
    return sorted(runs, key=lambda r: (_cost(r[0], gamma), r[1]))


def _cost(state, gamma):
    if gamma is None:
        return state.total_response
    return state.total_response - gamma * state.served


def replay(sim: Simulator, state: SystemState, key):
    """Apply an encoded decision sequence; returns the final state and the
    decisions as ``(kind, ambulance, target)`` triples."""
    path = []
    fleet = sim.scenario.fleet_size
    for v in key:
        acts = {encode(a, fleet): a for a in sim.feasible_actions(state)}
        act = acts[v]
        path.append(act.key)
        state = sim.step(state, act, check=False)
    if not state.terminal or state.dead:
        raise InfeasibleError("decision sequence does not complete the episode")
    return state, path


def search(sim: Simulator, root: SystemState | None = None, *, gamma=None,
           node_limit=None, graph: DispatchDigraph | None = None) -> OfflineSolution:
    """Optimal schedule from ``root`` (default: the episode start)."""
    t0 = time.perf_counter()
    fresh = root is None
    root = root if root is not None else sim.initial_state()
    bb = BranchAndBound(sim, root, gamma, node_limit)
    seeds = incumbents(sim, root, gamma)
    if seeds:
        bb.upper = _cost(seeds[0][0], gamma)
    optimal = True
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 20000))
    try:
        bb.run()
    except Budget:
        optimal = False
        log.warning("node limit %s reached; returning best schedule found", node_limit)
    finally:
        sys.setrecursionlimit(limit)
    if bb.best_key is not None:
        leaf, path = replay(sim, root, bb.best_key)
        key = bb.best_key
    elif seeds:  # nothing strictly better than the benchmark incumbent
        leaf, key, path = seeds[0]
    else:
        unservable = graph.unreachable_emergencies() if graph is not None else []
        names = [tag_str(v) for v in unservable] or ["<no feasible schedule>"]
        raise InfeasibleError("offline instance infeasible; unservable: " + ", ".join(names),
                              unservable)
    sol = OfflineSolution(
        objective=_cost(leaf, gamma),
        total_response=leaf.total_response,
        served=leaf.served,
        decisions=path,
        key=key,
        schedules=[list(a.schedule) for a in leaf.ambulances],
        dropped=list(leaf.dropped),
        optimal=optimal,
        nodes=bb.nodes,
        runtime=time.perf_counter() - t0,
        gamma=gamma,
    )
    if fresh and graph is not None:
        sol.paths = schedule_paths(leaf)
        sol.alpha, sol.beta = arc_terms(graph, sol.paths)
    return sol


def schedule_paths(state: SystemState) -> list[list[tuple]]:
    paths = []
    for a in state.ambulances:
        p = [SOURCE, ("m", a.id)]
        parent = None
        for e in a.schedule:
            if e.kind is RequestKind.EMERGENCY:
                p.append(("e", e.request_id))
                parent = e.request_id
            else:
                p.append(("w", parent, redeploy_index(e.request_id)))
        p.append(SINK)
        paths.append(p)
    return paths


def _graph_sim(g: DispatchDigraph, allow_drop: bool) -> Simulator:
    if g.scenario is None:
        raise InputError("digraph carries no scenario; build it with build_digraph")
    return Simulator(g.scenario, g.requests, arc_filter=g.has_arc, allow_drop=allow_drop)


def solve_offline_hard(g: DispatchDigraph, *, node_limit=None) -> OfflineSolution:
    """Minimum total response with every emergency served."""
    if not g.requests:
        return search(_graph_sim(g, False), graph=g)
    missing = g.unreachable_emergencies()
    if missing:
        raise InfeasibleError("unservable emergencies: " + ", ".join(tag_str(v) for v in missing),
                              missing)
    return search(_graph_sim(g, False), graph=g, node_limit=node_limit)


def solve_offline_soft(g: DispatchDigraph, gamma: float, *, node_limit=None) -> OfflineSolution:
    """Emergencies may be dropped; each served one earns ``gamma`` seconds."""
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise InputError("gamma must be a finite non-negative penalty")
    return search(_graph_sim(g, True), gamma=float(gamma), graph=g, node_limit=node_limit)


def solve_residual(sim: Simulator, state: SystemState, *, node_limit=None) -> OfflineSolution:
    """Optimal continuation from a mid-episode decision state."""
    return search(sim, state, node_limit=node_limit)
