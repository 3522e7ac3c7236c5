"""Industry-practice online policies and the optimal-replay warmup policy.

A policy is any callable ``policy(sim, state, actions)`` that returns the index
of the chosen action (or the action itself). Ties are broken by the smallest
identifier throughout.
"""
from __future__ import annotations

import random
from typing import Mapping

from .core import Location, ScenarioConfig
from .errors import ContractError, InputError
from .simulator import DISPATCH, REDEPLOY, Simulator, SystemState


def _closest_idle(sim, state, actions):
    travel = sim.scenario.travel
    best, best_key = None, None
    for i, a in enumerate(actions):
        if a.kind != DISPATCH:
            continue
        amb = state.ambulances[a.ambulance]
        k = (travel(amb.position, a.request.origin), a.ambulance)
        if best_key is None or k < best_key:
            best, best_key = i, k
    if best is None:
        raise ContractError("no dispatch option at an emergency epoch")
    return best


class CICS:
    """Closest idle ambulance; redeploy to the closest waiting location."""

    name = "CICS"

    def __call__(self, sim: Simulator, state: SystemState, actions):
        if state.is_dispatch_epoch:
            return _closest_idle(sim, state, actions)
        travel = sim.scenario.travel
        pos = state.ambulances[state.decider].position
        return min(range(len(actions)),
                   key=lambda i: (travel(pos, actions[i].request.origin), actions[i].target))


def home_bases(scenario: ScenarioConfig, bases=None) -> dict[int, int]:
    """Normalise a home-base map to ``ambulance id -> waiting-location index``.

    ``bases`` may map ids to locations or to indices; by default each
    ambulance's home is its start location.
    """
    wl = list(scenario.waiting_locations)
    if bases is None:
        bases = dict(enumerate(scenario.start_locations()))
    out = {}
    for m in range(scenario.fleet_size):
        if m not in bases:
            raise InputError(f"ambulance {m} has no home base")
        b = bases[m]
        if isinstance(b, Location):
            if b not in wl:
                raise InputError(f"home base of ambulance {m} is not a waiting location")
            b = wl.index(b)
        b = int(b)
        if not 0 <= b < len(wl):
            raise InputError(f"home base index {b} out of range")
        out[m] = b
    return out


class CIFS:
    """Closest idle ambulance; always redeploy to the ambulance's home base."""

    name = "CIFS"

    def __init__(self, bases: Mapping[int, int]):
        self.bases = dict(bases)

    def __call__(self, sim: Simulator, state: SystemState, actions):
        if state.is_dispatch_epoch:
            return _closest_idle(sim, state, actions)
        m = state.decider
        if m not in self.bases:
            raise InputError(f"ambulance {m} has no home base")
        for i, a in enumerate(actions):
            if a.target == self.bases[m]:
                return i
        raise ContractError(f"home base of ambulance {m} is not reachable")

    @classmethod
    def for_scenario(cls, scenario: ScenarioConfig, bases=None):
        return cls(home_bases(scenario, bases))


class RandomPolicy:
    """Uniformly random feasible decision."""

    name = "random"

    def __init__(self, seed=0):
        self.reset(seed)

    def reset(self, seed):
        self.rng = random.Random(seed)

    def __call__(self, sim, state, actions):
        return self.rng.randrange(len(actions))


class OptimalReplay:
    """Replays an offline solution's decisions verbatim."""

    name = "optimal-replay"

    def __init__(self, decisions):
        if hasattr(decisions, "decisions"):
            decisions = decisions.decisions
        self.decisions = [tuple(d) for d in decisions]
        self.pos = 0

    def reset(self, seed=None):
        self.pos = 0

    @property
    def exhausted(self):
        return self.pos >= len(self.decisions)

    def __call__(self, sim, state, actions):
        if self.exhausted:
            raise ContractError("replay ran past the end of the offline solution")
        want = self.decisions[self.pos]
        for i, a in enumerate(actions):
            if a.key == want:
                self.pos += 1
                return i
        raise ContractError(f"stream diverged from the offline solution at decision {self.pos}")


class WarmupHandover:
    """Offline-optimal decisions while the clock is inside the warmup window,
    then ``policy``. Every policy wrapped with the same offline solution
    therefore starts from the same post-warmup state."""

    def __init__(self, offline, policy, warmup: float):
        self.replay = OptimalReplay(offline)
        self.policy = policy
        self.warmup = warmup
        self.name = getattr(policy, "name", type(policy).__name__)

    def reset(self, seed=None):
        self.replay.reset()
        if hasattr(self.policy, "reset"):
            self.policy.reset(seed)

    def __call__(self, sim, state, actions):
        if state.clock < self.warmup and not self.replay.exhausted:
            return self.replay(sim, state, actions)
        return self.policy(sim, state, actions)


def handover_state(sim: Simulator, offline, warmup: float) -> SystemState:
    """State reached by replaying ``offline`` up to the end of the warmup."""
    replay = OptimalReplay(offline)
    state = sim.initial_state()
    while not state.terminal and state.clock < warmup:
        acts = sim.feasible_actions(state)
        state = sim.step(state, acts[replay(sim, state, acts)], check=False)
    return state


def cics_decide(sim, state, actions=None):
    actions = actions if actions is not None else sim.feasible_actions(state)
    return actions[CICS()(sim, state, actions)]


def cifs_decide(sim, state, bases, actions=None):
    actions = actions if actions is not None else sim.feasible_actions(state)
    return actions[CIFS(home_bases(sim.scenario, bases))(sim, state, actions)]
