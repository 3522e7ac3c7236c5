"""Acyclic dispatching digraph whose vertex-disjoint source-to-sink paths
encode per-ambulance offline schedules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from ..core import Location, Request, ScenarioConfig, travel_time

SOURCE = ("o",)
SINK = ("d",)


@dataclass(frozen=True)
class Vertex:
    kind: str  # 'o', 'd', 'm', 'e', 'w'
    entry_time: float = 0.0
    service_time: float = 0.0
    origin: Location | None = None
    dropoff: Location | None = None


@dataclass(frozen=True)
class Arc:
    tau: float
    delta: float
    conditional: bool = False


@dataclass
class DispatchDigraph:
    vertices: dict[tuple, Vertex]
    arcs: dict[tuple[tuple, tuple], Arc]
    horizon: float
    out: dict[tuple, list[tuple]] = field(default_factory=dict)
    scenario: ScenarioConfig | None = None
    requests: tuple[Request, ...] = ()

    def __post_init__(self):
        if not self.out:
            self._index()

    def _index(self):
        self.out = {v: [] for v in self.vertices}
        for (u, v) in self.arcs:
            self.out[u].append(v)

    def has_arc(self, u, v) -> bool:
        return (u, v) in self.arcs

    def remove_arc(self, u, v):
        del self.arcs[(u, v)]
        self.out[u].remove(v)

    def prune_travel(self, max_tau: float):
        """Drop every arc whose driving time exceeds ``max_tau`` seconds."""
        for key in [k for k, a in self.arcs.items() if a.tau > max_tau]:
            self.remove_arc(*key)
        return self

    def in_arcs(self, v):
        return [u for (u, w) in self.arcs if w == v]

    @property
    def emergency_vertices(self):
        return [v for v, info in self.vertices.items() if info.kind == "e"]

    @property
    def big_m(self) -> float:
        return self.horizon + max((a.tau for a in self.arcs.values()), default=0.0)

    def unreachable_emergencies(self):
        """Emergency vertices without any incoming arc."""
        has_in = {v for (_, v) in self.arcs}
        return [v for v in self.emergency_vertices if v not in has_in]

    def to_json(self):
        return {
            "vertices": [
                {"id": tag_str(v), "kind": info.kind, "entry_time": info.entry_time,
                 "service_time": info.service_time}
                for v, info in self.vertices.items()
            ],
            "arcs": [
                {"from": tag_str(u), "to": tag_str(v), "tau": a.tau, "delta": a.delta,
                 "conditional": a.conditional}
                for (u, v), a in self.arcs.items()
            ],
            "horizon": self.horizon,
        }


def tag_str(tag: tuple) -> str:
    return ":".join(str(x) for x in tag)


def build_digraph(scenario: ScenarioConfig, requests: Sequence[Request],
                  release_times: Sequence[float] | None = None) -> DispatchDigraph:
    """Vertices and arcs per the six construction rules.

    Redeployment vertices spawned by emergency ``r`` enter at ``e_r + s_r``.
    """
    speed = scenario.speed_kmh
    reqs = sorted(requests, key=lambda r: (r.entry_time, str(r.id)))
    starts = scenario.start_locations()
    release = list(release_times) if release_times is not None else [0.0] * len(starts)
    V: dict[tuple, Vertex] = {SOURCE: Vertex("o"), SINK: Vertex("d")}
    A: dict[tuple[tuple, tuple], Arc] = {}
    amb = []
    for i, loc in enumerate(starts):
        tag = ("m", i)
        V[tag] = Vertex("m", release[i], 0.0, loc, loc)
        amb.append(tag)
    emg = []
    for r in reqs:
        tag = ("e", r.id)
        V[tag] = Vertex("e", r.entry_time, r.service_time, r.origin, r.dropoff)
        emg.append(tag)
    red = {}
    for r in reqs:
        red[r.id] = []
        for k, w in enumerate(scenario.waiting_locations):
            tag = ("w", r.id, k)
            V[tag] = Vertex("w", r.entry_time + r.service_time, 0.0, w, w)
            red[r.id].append(tag)

    def link(u, v, conditional=False):
        iu, iv = V[u], V[v]
        if iv.kind == "d" or iu.kind == "o":
            A[(u, v)] = Arc(0.0, 0.0, False)
            return
        tau = travel_time(iu.dropoff, iv.origin, speed)
        delta = iv.entry_time - iu.entry_time - iu.service_time
        A[(u, v)] = Arc(tau, delta, conditional)

    for m in amb:  # rule 1
        link(SOURCE, m)
    for m in amb:  # rule 2
        for e in emg:
            link(m, e)
    for r in reqs:  # rule 3
        for w in red[r.id]:
            link(("e", r.id), w)
    for r in reqs:  # rule 4
        for w in red[r.id]:
            for r2 in reqs:
                if V[w].entry_time < r2.entry_time:
                    link(w, ("e", r2.id))
    for r in reqs:  # rule 5
        for r2 in reqs:
            if r.entry_time < r2.entry_time:
                link(("e", r.id), ("e", r2.id), conditional=True)
    for r in reqs:  # rule 6
        for w in red[r.id]:
            link(w, SINK)
    for m in amb:
        link(m, SINK)
    horizon = max([scenario.horizon] + [r.entry_time + r.service_time for r in reqs])
    return DispatchDigraph(V, A, horizon, scenario=scenario, requests=tuple(reqs))


def arc_terms(g: DispatchDigraph, paths: Sequence[Sequence[tuple]]):
    """Response terms ``alpha`` and delays ``beta`` on the arcs of selected paths.

    ``beta_ij = max(sum_k alpha_ki - delta_ij, 0)`` and ``alpha_ij = tau_ij + beta_ij``
    for arcs into request vertices; both vanish on arcs into ambulance vertices
    and the sink.
    """
    alpha, beta = {}, {}
    for path in paths:
        alpha_in = 0.0
        for u, v in zip(path, path[1:]):
            arc = g.arcs[(u, v)]
            kind = g.vertices[v].kind
            if kind in ("e", "w"):
                b = max(alpha_in - arc.delta, 0.0)
                a = arc.tau + b
            else:
                a = b = 0.0
            alpha[(u, v)], beta[(u, v)] = a, b
            alpha_in = a
    return alpha, beta


def linearization_violations(g: DispatchDigraph, x: dict, alpha: dict, beta: dict, tol=1e-6):
    """Check a 0/1 arc selection against the linearised model.

    ``w = beta * x`` through McCormick envelopes with ``beta in [0, M]``,
    ``alpha = tau * x + w``, and the max in the delay definition through big-M
    with an indicator ``z``. Unselected arcs take the smallest admissible delay.
    Returns a list of violated constraint descriptions (empty when feasible).
    """
    M = g.big_m
    bad = []
    inflow = {v: 0.0 for v in g.vertices}
    for (u, v) in g.arcs:
        inflow[v] += alpha.get((u, v), 0.0) * x.get((u, v), 0)
    for (u, v), arc in g.arcs.items():
        xv = x.get((u, v), 0)
        if g.vertices[v].kind not in ("e", "w"):
            continue
        lhs = inflow[u] - arc.delta
        b = beta.get((u, v), max(lhs, 0.0))
        w = b * xv
        a = alpha.get((u, v), 0.0) if xv else 0.0
        z = 1 if lhs > 0 else 0
        bl, bu, xl, xu = 0.0, M, 0, 1
        checks = {
            "mccormick_1": w <= bl * xv + b * xu - bl * xu + tol,
            "mccormick_2": w <= bu * xv + b * xl - bu * xl + tol,
            "mccormick_3": w >= bl * xv + b * xl - bl * xl - tol,
            "mccormick_4": w >= bu * xv + b * xu - bu * xu - tol,
            "alpha_definition": abs(a - (arc.tau * xv + w)) <= tol,
            "delay_ge_gap": b >= lhs - tol,
            "delay_ge_zero": b >= -tol,
            "delay_le_gap_bigM": b <= lhs + M * (1 - z) + tol,
            "delay_le_indicator": b <= M * z + tol,
            "delay_bounds": bl - tol <= b <= bu + tol,
        }
        if g.vertices[u].kind == "e" and g.vertices[v].kind == "e" and xv:
            # direct dispatch only towards a request that waited for this ambulance
            checks["direct_requires_queue"] = lhs >= -tol
        for name, ok in checks.items():
            if not ok:
                bad.append(f"{tag_str(u)}->{tag_str(v)}: {name}")
    return bad
