"""Exhaustive validation oracle for tiny offline instances.

Enumerates every assignment of emergencies to ambulances (or to nobody, in
the soft variant) and every redeployment choice, rebuilds each ambulance's
chain with :func:`respond`, and keeps only schedules an online dispatcher
could realise: a request is served directly after another only if every
ambulance was busy when it arrived, freed ambulances take the queue head
first-in-first-out, and idle ambulances never leave a request waiting.
Shares no code with the search solver beyond the timing algebra.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from ..core import Request, ScenarioConfig, respond, travel_time
from ..errors import InfeasibleError, InputError
from .digraph import SINK, SOURCE, DispatchDigraph

MAX_AMBULANCES = 3
MAX_EMERGENCIES = 4
MAX_WAITING = 2
TOL = 1e-6


@dataclass
class BruteForceResult:
    objective: float
    total_response: float
    key: tuple
    assignment: tuple
    redeployments: tuple
    paths: list[list[tuple]]
    responses: dict
    n_valid: int


def brute_force_offline(scenario: ScenarioConfig, requests, graph: DispatchDigraph | None = None,
                        gamma: float | None = None) -> BruteForceResult:
    reqs = sorted(requests, key=lambda r: (r.entry_time, str(r.id)))
    M, L, n = scenario.fleet_size, len(scenario.waiting_locations), len(reqs)
    if M > MAX_AMBULANCES or n > MAX_EMERGENCIES or L > MAX_WAITING:
        raise InputError(
            f"instance too large for exhaustive search ({M} ambulances, {n} emergencies, "
            f"{L} waiting locations)")
    soft = gamma is not None
    choices = range(-1, M) if soft else range(M)
    best = None
    n_valid = 0
    for assign in itertools.product(choices, repeat=n):
        for redeploy in itertools.product(range(L), repeat=n):
            res = _evaluate(scenario, reqs, assign, redeploy, graph, soft)
            if res is None:
                continue
            n_valid += 1
            total, key, paths, resp = res
            served = sum(1 for a in assign if a >= 0)
            obj = total - gamma * served if soft else total
            if (best is None or obj < best[0] - TOL
                    or (obj <= best[0] + TOL and key < best[2])):
                best = (min(obj, best[0]) if best else obj, total, key, assign, redeploy,
                        paths, resp)
    if best is None:
        raise InfeasibleError("no feasible schedule")
    obj, total, key, assign, redeploy, paths, resp = best
    return BruteForceResult(obj, total, key, assign, redeploy, paths, resp, n_valid)


def _arc(graph, u, v):
    return graph is None or graph.has_arc(u, v)


def _evaluate(scenario, reqs, assign, redeploy, graph, allow_drop):
    speed = scenario.speed_kmh
    wl = scenario.waiting_locations
    starts = scenario.start_locations()
    n = len(reqs)
    direct = [False] * n
    start = [0.0] * n
    arrival = [0.0] * n
    done = [0.0] * n
    owner_next = [None] * n
    intervals = [[] for _ in range(scenario.fleet_size)]
    paths = []
    for m in range(scenario.fleet_size):
        chain = [i for i in range(n) if assign[i] == m]
        path = [SOURCE, ("m", m)]
        prev = None
        for i in chain:
            r = reqs[i]
            if prev is None:
                if not _arc(graph, ("m", m), ("e", r.id)):
                    return None
                arrival[i], done[i] = respond(0.0, starts[m], r, speed)
                start[i] = r.entry_time
            elif r.entry_time <= done[prev]:
                if not (reqs[prev].entry_time < r.entry_time
                        and _arc(graph, ("e", reqs[prev].id), ("e", r.id))):
                    return None
                if redeploy[prev] != 0:
                    return None  # choice unused; keep one canonical representative
                direct[i] = True
                arrival[i], done[i] = respond(done[prev], reqs[prev].dropoff, r, speed)
                start[i] = done[prev]
            else:
                k = redeploy[prev]
                w = ("w", reqs[prev].id, k)
                if not (_arc(graph, ("e", reqs[prev].id), w) and _arc(graph, w, ("e", r.id))):
                    return None
                path.append(w)
                at_station = done[prev] + travel_time(reqs[prev].dropoff, wl[k], speed)
                arrival[i], done[i] = respond(at_station, wl[k], r, speed)
                start[i] = r.entry_time
            if prev is not None:
                owner_next[prev] = i
            path.append(("e", r.id))
            intervals[m].append((start[i], done[i], i))
            prev = i
        if prev is not None:
            w = ("w", reqs[prev].id, redeploy[prev])
            if not (_arc(graph, ("e", reqs[prev].id), w) and _arc(graph, w, SINK)):
                return None
            path.append(w)
        path.append(SINK)
        paths.append(path)

    def busy(m, t, exclude):
        return any(s <= t <= c for s, c, j in intervals[m] if j != exclude)

    served = [i for i in range(n) if assign[i] >= 0]
    for i in served:
        all_busy = all(busy(m, reqs[i].entry_time, i) for m in range(scenario.fleet_size))
        if direct[i] != all_busy:
            return None
    # first-in-first-out at every completion
    frees = sorted(((done[i], assign[i], i) for i in served), key=lambda x: (x[0], x[1]))
    taken = set()
    queued = sorted((i for i in served if direct[i]), key=lambda i: (reqs[i].entry_time, i))
    for c, m, i in frees:
        waiting = [j for j in queued if j not in taken and reqs[j].entry_time <= c]
        nxt = owner_next[i]
        if waiting:
            if nxt != waiting[0]:
                return None
            taken.add(nxt)
        elif nxt is not None and direct[nxt]:
            return None
    total = 0.0
    resp = {}
    for i in served:
        resp[reqs[i].id] = arrival[i] - reqs[i].entry_time
        total += resp[reqs[i].id]
    # decision epochs in processing order: arrivals before completions at equal
    # times, completions by ambulance id
    soft = allow_drop
    epochs = []
    for i in range(n):
        if assign[i] < 0:
            epochs.append(((reqs[i].entry_time, 0, i), -1))
        elif not direct[i]:
            epochs.append(((reqs[i].entry_time, 0, i), assign[i]))
        elif soft:
            epochs.append(((reqs[i].entry_time, 0, i), scenario.fleet_size))
    for i in served:
        nxt = owner_next[i]
        if nxt is None or not direct[nxt]:
            epochs.append(((done[i], 1, assign[i]), redeploy[i]))
    epochs.sort(key=lambda e: e[0])
    key = tuple(v for _, v in epochs)
    return total, key, paths, resp
