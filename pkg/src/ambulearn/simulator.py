"""Event-based engine for the dispatching and redeployment decision process.

States are immutable so that search code can branch on them cheaply. A state
returned by :meth:`Simulator.step` is always either a decision epoch (``batch``
non-empty) or terminal.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .core import Location, Request, RequestKind, ScenarioConfig, ScheduleEntry, respond
from .errors import ContractError, InputError

DISPATCH = "dispatch"
REDEPLOY = "redeploy"
DROP = "drop"
QUEUE = "queue"


@dataclass(frozen=True)
class AmbulanceState:
    id: int
    home: Location
    position: Location  # drop-off of the last assigned request
    free_at: float  # completion time of the last assigned request
    busy: bool  # serving an emergency; a free event is pending
    vertex: tuple  # dispatching-digraph vertex of the last assigned request
    last_freed: float = 0.0
    schedule: tuple[ScheduleEntry, ...] = ()


@dataclass(frozen=True)
class SystemState:
    clock: float
    batch: tuple[Request, ...]
    decider: int | None
    ambulances: tuple[AmbulanceState, ...]
    queue: tuple[Request, ...] = ()
    cursor: int = 0
    total_response: float = 0.0
    served: int = 0
    dropped: tuple = ()
    dead: bool = False

    @property
    def terminal(self):
        return not self.batch

    @property
    def is_dispatch_epoch(self):
        return bool(self.batch) and self.batch[0].is_emergency

    def idle(self):
        return [a for a in self.ambulances if not a.busy]

    def digest(self):
        payload = (
            round(self.clock, 6), self.cursor, tuple(r.id for r in self.batch),
            tuple(r.id for r in self.queue),
            tuple((a.busy, round(a.free_at, 6), a.vertex) for a in self.ambulances),
        )
        return hashlib.sha1(repr(payload).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class Action:
    kind: str
    ambulance: int | None
    request: Request
    target: int | str  # emergency id, or waiting-location index for redeployments

    @property
    def key(self):
        return (self.kind, self.ambulance, self.target)


@dataclass
class TraceEvent:
    time: float
    kind: str
    ambulance: int | None
    target: int | str | None
    n_options: int = 0
    choice: int | None = None
    digest: str = ""

    def to_dict(self):
        return {
            "time": self.time, "kind": self.kind, "ambulance": self.ambulance,
            "target": self.target, "n_options": self.n_options, "choice": self.choice,
            "digest": self.digest,
        }


@dataclass
class EpisodeTrace:
    scenario: str
    events: list[TraceEvent]
    final_state: SystemState
    window: tuple[float, float]
    policy: str = ""

    @property
    def schedules(self):
        return [a.schedule for a in self.final_state.ambulances]

    @property
    def decisions(self):
        return [e for e in self.events if e.kind in (DISPATCH, REDEPLOY, DROP, QUEUE)]

    @property
    def served_count(self):
        return self.final_state.served

    @property
    def queued_count(self):
        return sum(1 for e in self.events if e.kind == "queued")

    def to_jsonl(self):
        lines = [json.dumps({"event": "header", "scenario": self.scenario, "policy": self.policy,
                             "window": list(self.window)})]
        lines += [json.dumps(e.to_dict()) for e in self.events]
        for a in self.final_state.ambulances:
            for s in a.schedule:
                lines.append(json.dumps({
                    "event": "served", "ambulance": a.id, "request": s.request_id,
                    "kind": s.kind.value, "entry": s.entry_time, "dispatch": s.dispatch_time,
                    "response": s.response_time, "completion": s.completion_time,
                }))
        return "\n".join(lines) + "\n"


Policy = Callable[["Simulator", SystemState, list[Action]], "int | Action"]


class Simulator:
    """Transition function over a fixed stream of emergency requests.

    ``arc_filter(u, v)`` restricts moves to the arcs of a dispatching digraph
    (vertex tags ``('m', id)``, ``('e', id)``, ``('w', id, k)``); ``allow_drop``
    enables the soft-constraint variant in which emergencies may go unserved.
    """

    def __init__(self, scenario: ScenarioConfig, requests: Sequence[Request], *,
                 arc_filter=None, allow_drop=False):
        reqs = sorted(requests, key=lambda r: (r.entry_time, str(r.id)))
        if any(not r.is_emergency for r in reqs):
            raise InputError("request streams contain emergencies only")
        self.scenario = scenario
        self.requests = tuple(reqs)
        self.arc_filter = arc_filter
        self.allow_drop = allow_drop
        self.speed = scenario.speed_kmh

    # -- states -----------------------------------------------------------
    def initial_state(self, on_event=None) -> SystemState:
        ambs = tuple(
            AmbulanceState(i, loc, loc, 0.0, False, ("m", i))
            for i, loc in enumerate(self.scenario.start_locations())
        )
        return self._advance(SystemState(0.0, (), None, ambs), on_event)

    def feasible_actions(self, state: SystemState) -> list[Action]:
        if not state.batch or state.dead:
            return []
        ok = self.arc_filter
        if state.is_dispatch_epoch:
            r = state.batch[0]
            acts = []
            if self.allow_drop:
                acts.append(Action(DROP, None, r, r.id))
            idle = [a for a in state.ambulances if not a.busy]
            for a in idle:
                if ok is None or ok(a.vertex, ("e", r.id)):
                    acts.append(Action(DISPATCH, a.id, r, r.id))
            if not idle and self.allow_drop:
                acts.append(Action(QUEUE, None, r, r.id))
            return acts
        amb = state.ambulances[state.decider]
        acts = []
        for k, w in enumerate(state.batch):
            if ok is None or ok(amb.vertex, ("w", amb.vertex[1], k)):
                acts.append(Action(REDEPLOY, amb.id, w, k))
        return acts

    def step(self, state: SystemState, action: Action, on_event=None, check=True) -> SystemState:
        if check and action not in self.feasible_actions(state):
            raise ContractError(f"infeasible decision {action.key} at state {state.digest()}")
        ambs = list(state.ambulances)
        queue = state.queue
        total, served, dropped = state.total_response, state.served, state.dropped
        t = state.clock
        if action.kind == DISPATCH:
            a = ambs[action.ambulance]
            r = action.request
            arrival, done = respond(a.free_at, a.position, r, self.speed)
            entry = ScheduleEntry(r.id, r.kind, r.entry_time, t, arrival, done)
            ambs[a.id] = replace(a, position=r.dropoff, free_at=done, busy=True,
                                 vertex=("e", r.id), schedule=a.schedule + (entry,))
            total += arrival - r.entry_time
            served += 1
        elif action.kind == REDEPLOY:
            a = ambs[action.ambulance]
            r = action.request
            arrival, done = respond(t, a.position, r, self.speed)
            entry = ScheduleEntry(r.id, r.kind, r.entry_time, t, arrival, done)
            ambs[a.id] = replace(a, position=r.dropoff, free_at=done, busy=False,
                                 vertex=("w", a.vertex[1], action.target),
                                 schedule=a.schedule + (entry,))
        elif action.kind == DROP:
            dropped = dropped + (action.request.id,)
        elif action.kind == QUEUE:
            queue = queue + (action.request,)
        else:
            raise ContractError(f"unknown action kind {action.kind!r}")
        nxt = SystemState(t, (), None, tuple(ambs), queue, state.cursor, total, served, dropped)
        return self._advance(nxt, on_event)

    def _advance(self, state: SystemState, on_event=None) -> SystemState:
        ambs = list(state.ambulances)
        queue = state.queue
        cursor = state.cursor
        total, served = state.total_response, state.served
        reqs = self.requests
        n = len(reqs)
        inf = float("inf")
        while True:
            te = reqs[cursor].entry_time if cursor < n else inf
            tf, m = inf, -1
            for a in ambs:
                if a.busy and a.free_at < tf:
                    tf, m = a.free_at, a.id
            if te == inf and tf == inf:
                return SystemState(state.clock, (), None, tuple(ambs), queue, cursor, total,
                                   served, state.dropped)
            if te <= tf:
                r = reqs[cursor]
                cursor += 1
                if self.allow_drop or any(not a.busy for a in ambs):
                    return SystemState(te, (r,), None, tuple(ambs), queue, cursor, total,
                                       served, state.dropped)
                queue = queue + (r,)
                if on_event:
                    on_event(TraceEvent(te, "queued", None, r.id))
                continue
            a = ambs[m]
            if queue:
                r, queue = queue[0], queue[1:]
                if self.arc_filter is not None and not self.arc_filter(a.vertex, ("e", r.id)):
                    return SystemState(tf, (), None, tuple(ambs), queue, cursor, total, served,
                                       state.dropped, dead=True)
                arrival, done = respond(a.free_at, a.position, r, self.speed)
                entry = ScheduleEntry(r.id, r.kind, r.entry_time, tf, arrival, done)
                ambs[m] = replace(a, position=r.dropoff, free_at=done, vertex=("e", r.id),
                                  last_freed=tf, schedule=a.schedule + (entry,))
                total += arrival - r.entry_time
                served += 1
                if on_event:
                    on_event(TraceEvent(tf, "forced", m, r.id))
                continue
            ambs[m] = replace(a, busy=False, last_freed=tf)
            parent = a.vertex[1]
            batch = tuple(
                Request.redeployment(f"{parent}/w{k}", w, tf)
                for k, w in enumerate(self.scenario.waiting_locations)
            )
            return SystemState(tf, batch, m, tuple(ambs), queue, cursor, total, served,
                               state.dropped)


def feasible_actions(sim: Simulator, state: SystemState) -> list[Action]:
    return sim.feasible_actions(state)


def run_episode(scenario: ScenarioConfig, requests: Sequence[Request], policy: Policy, *,
                seed=None, sim: Simulator | None = None, name="") -> EpisodeTrace:
    """Roll ``policy`` over the request stream until every ambulance is idle."""
    sim = sim or Simulator(scenario, requests)
    if seed is not None and hasattr(policy, "reset"):
        policy.reset(seed)
    events: list[TraceEvent] = []
    state = sim.initial_state(events.append)
    while not state.terminal:
        actions = sim.feasible_actions(state)
        if not actions:
            raise ContractError(f"no feasible decision at state {state.digest()}")
        choice = policy(sim, state, actions)
        if isinstance(choice, Action):
            if choice not in actions:
                raise ContractError(f"policy returned infeasible decision at {state.digest()}")
            idx = actions.index(choice)
        else:
            idx = int(choice)
            if not 0 <= idx < len(actions):
                raise ContractError(f"policy returned infeasible decision at {state.digest()}")
        act = actions[idx]
        events.append(TraceEvent(state.clock, act.kind, act.ambulance, act.target,
                                 len(actions), idx, state.digest()))
        state = sim.step(state, act, events.append, check=False)
    if state.dead:
        raise ContractError("episode reached an infeasible state")
    window = (scenario.warmup, scenario.horizon - scenario.cooldown)
    return EpisodeTrace(scenario.name, events, state, window,
                        policy=getattr(policy, "name", type(policy).__name__))
