"""Domain types, travel-time geometry and the timing algebra."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from .errors import InputError, UndefinedMetricError
from .kernels import haversine_km as _haversine

EARTH_RADIUS_KM = 6371.0
DEFAULT_SPEED_KMH = 30.0


@dataclass(frozen=True, order=True)
class Location:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InputError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise InputError(f"coordinates out of range ({self.lat}, {self.lon})")

    def as_list(self):
        return [self.lat, self.lon]


class RequestKind(str, enum.Enum):
    EMERGENCY = "emergency"
    REDEPLOYMENT = "redeployment"


@dataclass(frozen=True)
class Request:
    """An emergency call or a redeployment option ``(o_r, e_r, d_r, s_r)``."""

    id: int | str
    kind: RequestKind
    origin: Location
    entry_time: float
    dropoff: Location
    service_time: float = 0.0

    def __post_init__(self):
        if self.entry_time < 0 or self.service_time < 0:
            raise InputError(f"request {self.id}: negative time")
        if self.kind is RequestKind.REDEPLOYMENT and (
            self.service_time != 0 or self.origin != self.dropoff
        ):
            raise InputError(f"redeployment {self.id} must have zero service at a fixed point")

    @property
    def is_emergency(self):
        return self.kind is RequestKind.EMERGENCY

    @classmethod
    def emergency(cls, id, origin, entry_time, service_time=0.0, dropoff=None):
        return cls(id, RequestKind.EMERGENCY, origin, float(entry_time),
                   dropoff if dropoff is not None else origin, float(service_time))

    @classmethod
    def redeployment(cls, id, location, entry_time):
        return cls(id, RequestKind.REDEPLOYMENT, location, float(entry_time), location, 0.0)


@dataclass(frozen=True)
class ScheduleEntry:
    """One served request: times are absolute clock seconds."""

    request_id: int | str
    kind: RequestKind
    entry_time: float
    dispatch_time: float
    response_time: float
    completion_time: float

    @property
    def elapsed_response(self):
        return self.response_time - self.entry_time


@dataclass(frozen=True)
class ScenarioConfig:
    fleet_size: int
    waiting_locations: tuple[Location, ...]
    hospitals: tuple[Location, ...] = ()
    horizon: float = 6 * 3600.0
    warmup: float = 3600.0
    cooldown: float = 3600.0
    speed_kmh: float = DEFAULT_SPEED_KMH
    initial_locations: tuple[Location, ...] | None = None
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "waiting_locations", tuple(self.waiting_locations))
        object.__setattr__(self, "hospitals", tuple(self.hospitals))
        if self.initial_locations is not None:
            object.__setattr__(self, "initial_locations", tuple(self.initial_locations))
            if len(self.initial_locations) != self.fleet_size:
                raise InputError("initial_locations must list one location per ambulance")
        if self.fleet_size < 1:
            raise InputError("fleet size must be positive")
        if len(self.waiting_locations) < 1:
            raise InputError("at least one waiting location is required")
        if self.warmup < 0 or self.cooldown < 0 or self.horizon <= self.warmup + self.cooldown:
            raise InputError("horizon must exceed warmup + cooldown >= 0")
        if not self.speed_kmh > 0:
            raise InputError("speed must be positive")

    def start_locations(self) -> tuple[Location, ...]:
        if self.initial_locations is not None:
            return self.initial_locations
        wl = self.waiting_locations
        return tuple(wl[i % len(wl)] for i in range(self.fleet_size))

    def with_fleet(self, fleet_size, initial_locations=None):
        from dataclasses import replace

        return replace(self, fleet_size=fleet_size, initial_locations=initial_locations)

    def travel(self, a: Location, b: Location) -> float:
        return travel_time(a, b, self.speed_kmh)


def haversine(a: Location, b: Location) -> float:
    """Great-circle distance in km."""
    return _haversine(a.lat, a.lon, b.lat, b.lon)


@lru_cache(maxsize=1 << 18)
def travel_time(a: Location, b: Location, speed_kmh: float = DEFAULT_SPEED_KMH) -> float:
    """Driving time in seconds at constant speed over the haversine distance."""
    if not speed_kmh > 0:
        raise InputError("speed must be positive")
    if a == b:
        return 0.0
    return _haversine(a.lat, a.lon, b.lat, b.lon) / speed_kmh * 3600.0


def slack(r: Request, r2: Request) -> float:
    return r2.entry_time - r.entry_time - r.service_time


def respond(prev_completion: float, prev_dropoff: Location, r2: Request,
            speed_kmh: float = DEFAULT_SPEED_KMH) -> tuple[float, float]:
    """Absolute scene-arrival and completion time of ``r2`` served after a
    request that completed at ``prev_completion`` at ``prev_dropoff``."""
    start = max(prev_completion, r2.entry_time)
    arrival = start + travel_time(prev_dropoff, r2.origin, speed_kmh)
    return arrival, arrival + r2.service_time


def mean_response_time(entries: Iterable[ScheduleEntry]) -> float:
    """Mean elapsed response (arrival minus call entry) over emergencies only."""
    total = 0.0
    n = 0
    for e in entries:
        if e.kind is RequestKind.EMERGENCY:
            total += e.elapsed_response
            n += 1
    if n == 0:
        raise UndefinedMetricError("no served emergency requests")
    return total / n


def flatten(schedules: Sequence[Sequence[ScheduleEntry]]) -> list[ScheduleEntry]:
    return [e for s in schedules for e in s]
