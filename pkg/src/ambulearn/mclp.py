"""Ambulance-to-station allocation by an extended maximum covering location
model, plus the hexagonal demand binning it runs on.

Regions are hexagonal cells; each has a demand share ``mu``. Station ``s``
covers region ``g`` when the travel time from the station to the cell centre
is at most ``kappa``. The model chooses integer station counts ``x_s <= a``
summing to the fleet size and cover counts ``y_g <= sum of x over covering
stations`` with ``y_g >= zeta``, maximising ``sum mu_g * y_g``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import DEFAULT_SPEED_KMH, Location, travel_time
from .errors import InfeasibleError, InputError

CELL_AREA_KM2 = 0.737
KM_PER_DEG_LAT = 111.32


# -- hexagonal binning ---------------------------------------------------------------
@dataclass(frozen=True)
class HexGrid:
    """Pointy-top axial hex grid on a local equirectangular projection."""

    origin: Location
    area_km2: float = CELL_AREA_KM2

    @property
    def side_km(self):
        return math.sqrt(2.0 * self.area_km2 / (3.0 * math.sqrt(3.0)))

    def _xy(self, loc: Location):
        kx = KM_PER_DEG_LAT * math.cos(math.radians(self.origin.lat))
        return (loc.lon - self.origin.lon) * kx, (loc.lat - self.origin.lat) * KM_PER_DEG_LAT

    def cell(self, loc: Location) -> tuple[int, int]:
        x, y = self._xy(loc)
        s = self.side_km
        q = (math.sqrt(3.0) / 3.0 * x - y / 3.0) / s
        r = (2.0 / 3.0 * y) / s
        return _axial_round(q, r)

    def center(self, cell: tuple[int, int]) -> Location:
        q, r = cell
        s = self.side_km
        x = s * math.sqrt(3.0) * (q + r / 2.0)
        y = s * 1.5 * r
        kx = KM_PER_DEG_LAT * math.cos(math.radians(self.origin.lat))
        return Location(self.origin.lat + y / KM_PER_DEG_LAT, self.origin.lon + x / kx)


def _axial_round(q, r):
    x, z = q, r
    y = -x - z
    rx, ry, rz = round(x), round(y), round(z)
    dx, dy, dz = abs(rx - x), abs(ry - y), abs(rz - z)
    if dx > dy and dx > dz:
        rx = -ry - rz
    elif dy > dz:
        ry = -rx - rz
    else:
        rz = -rx - ry
    return int(rx), int(rz)


@dataclass
class Region:
    cell: tuple[int, int]
    center: Location
    mu: float
    count: int


def bin_regions(calls: Sequence[Location], area_km2: float = CELL_AREA_KM2,
                grid: HexGrid | None = None) -> list[Region]:
    """Hex cells with at least one call, with their call shares."""
    calls = list(calls)
    if not calls:
        raise InputError("empty call history")
    if grid is None:
        grid = HexGrid(Location(min(c.lat for c in calls), min(c.lon for c in calls)), area_km2)
    counts: dict[tuple[int, int], int] = {}
    for c in calls:
        k = grid.cell(c)
        counts[k] = counts.get(k, 0) + 1
    n = len(calls)
    return [Region(k, grid.center(k), counts[k] / n, counts[k]) for k in sorted(counts)]


# -- model -----------------------------------------------------------------------------
@dataclass
class MclpInstance:
    centers: list[Location]
    mu: list[float]
    stations: list[Location]
    fleet_size: int
    kappa: float = 600.0
    zeta: int = 2
    cap: int = 2
    speed_kmh: float = DEFAULT_SPEED_KMH
    cover: list[list[int]] = field(default_factory=list)  # stations covering each region

    def __post_init__(self):
        if len(self.centers) != len(self.mu):
            raise InputError("one demand share per region")
        if any(m < 0 for m in self.mu) or abs(sum(self.mu) - 1.0) > 1e-9:
            raise InputError("demand shares must be non-negative and sum to 1")
        if not self.kappa > 0 or self.zeta < 0 or self.cap < 1 or self.fleet_size < 0:
            raise InputError("need kappa > 0, zeta >= 0, a >= 1")
        if not self.stations:
            raise InputError("no stations")
        if not self.cover:
            self.cover = [
                [s for s, loc in enumerate(self.stations)
                 if travel_time(loc, c, self.speed_kmh) <= self.kappa]
                for c in self.centers
            ]

    @classmethod
    def from_regions(cls, regions: Sequence[Region], stations, fleet_size, **kw):
        return cls([r.center for r in regions], [r.mu for r in regions], list(stations),
                   fleet_size, **kw)


@dataclass
class Allocation:
    x: list[int]
    y: list[int]
    objective: float
    nodes: int = 0

    def to_json(self):
        return {"stations": {str(s): c for s, c in enumerate(self.x)}, "cover": self.y,
                "objective": self.objective}

    def home_bases(self) -> dict[int, int]:
        """Ambulance id -> station index, stations filled in id order."""
        out, m = {}, 0
        for s, c in enumerate(self.x):
            for _ in range(c):
                out[m] = s
                m += 1
        return out


def _covers(inst, x):
    return [sum(x[s] for s in cov) for cov in inst.cover]


def evaluate(inst: MclpInstance, x) -> float | None:
    """Objective of station counts ``x`` or None if infeasible; the best
    ``y`` is the full cover count."""
    if sum(x) != inst.fleet_size or any(v < 0 or v > inst.cap for v in x):
        return None
    ys = _covers(inst, x)
    if any(y < inst.zeta for y in ys):
        return None
    return sum(m * y for m, y in zip(inst.mu, ys))


def _check_coverable(inst):
    bad = [g for g, cov in enumerate(inst.cover)
           if min(len(cov) * inst.cap, inst.fleet_size) < inst.zeta]
    if bad:
        raise InfeasibleError("regions cannot reach the minimum coverage: "
                              + ", ".join(map(str, bad)), bad)
    if inst.fleet_size > inst.cap * len(inst.stations):
        raise InfeasibleError("fleet exceeds total station capacity")


def solve_mclp(inst: MclpInstance) -> Allocation:
    """Exact optimum by depth-first branch-and-bound over ``x_s``.

    Stations are fixed one at a time in index order, trying larger counts
    first. The bound gives every remaining ambulance to the best remaining
    station weight, and coverage feasibility is checked against the maximum
    still attainable. Ties keep the first allocation found, which is the
    lexicographically largest ``x``.
    """
    _check_coverable(inst)
    S, M, a = len(inst.stations), inst.fleet_size, inst.cap
    weight = [0.0] * S
    regions_of = [[] for _ in range(S)]
    for g, cov in enumerate(inst.cover):
        for s in cov:
            weight[s] += inst.mu[g]
            regions_of[s].append(g)
    best = {"val": -math.inf, "x": None}
    nodes = 0
    x = [0] * S
    cover = [0] * len(inst.mu)
    # remaining coverage still attainable per region from stations >= s
    reach = [[0] * len(inst.mu) for _ in range(S + 1)]
    for s in range(S - 1, -1, -1):
        reach[s] = list(reach[s + 1])
        for g in regions_of[s]:
            reach[s][g] += a

    def bound(s, left, val):
        ws = sorted(weight[s:], reverse=True)
        extra, k = 0.0, left
        for w in ws:
            take = min(a, k)
            extra += take * w
            k -= take
            if k == 0:
                break
        return val + extra

    def dfs(s, left, val):
        nonlocal nodes
        nodes += 1
        if s == S:
            if left == 0 and all(c >= inst.zeta for c in cover):
                v = evaluate(inst, x)
                if v > best["val"] + 1e-12:
                    best["val"], best["x"] = v, list(x)
            return
        if left > a * (S - s):
            return
        if any(cover[g] + min(reach[s][g], left) < inst.zeta for g in range(len(cover))):
            return
        if bound(s, left, val) <= best["val"] + 1e-12:
            return
        for c in range(min(a, left), -1, -1):
            x[s] = c
            for g in regions_of[s]:
                cover[g] += c
            dfs(s + 1, left - c, val + c * weight[s])
            for g in regions_of[s]:
                cover[g] -= c
        x[s] = 0

    dfs(0, M, 0.0)
    if best["x"] is None:
        raise InfeasibleError("no allocation meets the minimum coverage", [])
    xs = best["x"]
    return Allocation(xs, _covers(inst, xs), evaluate(inst, xs), nodes)


def brute_force_mclp(inst: MclpInstance) -> Allocation:
    """Enumerates every allocation; same tie rule as :func:`solve_mclp`."""
    S = len(inst.stations)
    best_val, best_x = -math.inf, None
    for x in itertools.product(range(inst.cap, -1, -1), repeat=S):
        v = evaluate(inst, x)
        if v is not None and v > best_val + 1e-12:
            best_val, best_x = v, list(x)
    if best_x is None:
        raise InfeasibleError("no allocation meets the minimum coverage", [])
    return Allocation(best_x, _covers(inst, best_x), best_val)
