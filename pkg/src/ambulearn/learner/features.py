"""Per-edge state features.

Columns, in order:

0. travel time from the ambulance's current location to the edge target
1. redeployment indicator
2. sine of the time of day
3. cosine of the time of day
4. other idle ambulances within ``kappa`` of the target
5. historical call rate (per hour) of the target's hex cell
6. demand cells within ``kappa`` of the target that stay covered by another
   idle ambulance if this one leaves
7. queue length
8. minutes since the ambulance was last freed
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import Location, Request, ScenarioConfig
from ..errors import InputError
from ..mclp import CELL_AREA_KM2, HexGrid
from ..simulator import DISPATCH

FEATURE_NAMES = (
    "travel_s", "is_redeploy", "tod_sin", "tod_cos", "idle_nearby", "cell_rate",
    "covered_cells", "queue_len", "minutes_since_free",
)
N_FEATURES = len(FEATURE_NAMES)
DAY = 86400.0


@dataclass
class FeatureContext:
    """Frozen statistics from the training period."""

    scenario: ScenarioConfig
    grid: HexGrid
    cell_rate: dict = field(default_factory=dict)  # cell -> calls per hour
    kappa: float = 600.0

    @classmethod
    def from_history(cls, scenario: ScenarioConfig, history: Sequence[Request], hours: float,
                     kappa: float = 600.0, area_km2: float = CELL_AREA_KM2):
        if not hours > 0:
            raise InputError("history length must be positive")
        pts = [r.origin for r in history] or list(scenario.waiting_locations)
        origin = Location(min(p.lat for p in pts) - 0.05, min(p.lon for p in pts) - 0.05)
        grid = HexGrid(origin, area_km2)
        counts: dict = {}
        for r in history:
            c = grid.cell(r.origin)
            counts[c] = counts.get(c, 0) + 1
        rate = {c: n / hours for c, n in sorted(counts.items())}
        return cls(scenario, grid, rate, kappa)

    def to_json(self):
        return {"grid_origin": self.grid.origin.as_list(), "area_km2": self.grid.area_km2,
                "kappa": self.kappa,
                "cell_rate": [[q, r, v] for (q, r), v in sorted(self.cell_rate.items())]}

    @classmethod
    def from_json(cls, scenario: ScenarioConfig, d):
        grid = HexGrid(Location(*d["grid_origin"]), d["area_km2"])
        return cls(scenario, grid, {(int(q), int(r)): v for q, r, v in d["cell_rate"]},
                   d["kappa"])

    def __post_init__(self):
        self._cells = sorted(self.cell_rate)
        self._centers = [self.grid.center(c) for c in self._cells]
        self._cell_of: dict = {}

    def cell_of(self, loc: Location):
        c = self._cell_of.get(loc)
        if c is None:
            c = self._cell_of[loc] = self.grid.cell(loc)
        return c

    def rate_at(self, loc: Location) -> float:
        return self.cell_rate.get(self.cell_of(loc), 0.0)


def edge_features(sim, state, graph, ctx: FeatureContext | None) -> np.ndarray:
    """Feature rows, one per edge of ``graph`` (its ``actions`` order)."""
    if ctx is None:
        raise InputError("feature context statistics are required")
    travel = sim.scenario.travel
    t = state.clock
    phase = 2.0 * math.pi * ((t % DAY) / DAY)
    s, c = math.sin(phase), math.cos(phase)
    idle = [a for a in state.ambulances if not a.busy]
    rows = np.empty((len(graph.actions), N_FEATURES))
    kappa = ctx.kappa
    for i, act in enumerate(graph.actions):
        amb = state.ambulances[act.ambulance]
        target = act.request.origin
        others = [a for a in idle if a.id != amb.id]
        near = sum(1 for a in others if travel(a.position, target) <= kappa)
        covered = 0
        for center in ctx._centers:
            if travel(target, center) <= kappa and any(
                    travel(a.position, center) <= kappa for a in others):
                covered += 1
        rows[i] = (
            travel(amb.position, target),
            0.0 if act.kind == DISPATCH else 1.0,
            s,
            c,
            near,
            ctx.rate_at(target),
            covered,
            len(state.queue),
            (t - amb.last_freed) / 60.0,
        )
    return rows


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray):
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or len(rows) == 0:
            raise InputError("need a non-empty feature matrix")
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std[std == 0] = 1.0
        return cls(mean, std)

    def __call__(self, rows):
        return (np.asarray(rows, dtype=float) - self.mean) / self.std

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def correlation_filter(X, threshold: float = 0.80):
    """Greedy removal of the later feature of every pair with |r| > threshold.

    Returns ``(retained, flagged)``; zero-variance columns are kept but flagged.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InputError("correlation filter needs at least two samples")
    sd = X.std(axis=0)
    flagged = [int(j) for j in np.flatnonzero(sd == 0)]
    retained: list[int] = []
    Z = np.zeros_like(X)
    ok = sd > 0
    Z[:, ok] = (X[:, ok] - X[:, ok].mean(axis=0)) / sd[ok]
    n = X.shape[0]
    for j in range(X.shape[1]):
        keep = True
        if ok[j]:
            for k in retained:
                if ok[k] and abs(float(Z[:, j] @ Z[:, k]) / n) > threshold:
                    keep = False
                    break
        if keep:
            retained.append(j)
    return retained, flagged
