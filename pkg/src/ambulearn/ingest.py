"""Call-record parsing, synthetic request streams and run configuration."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence, TextIO

import numpy as np

from .core import Location, Request, RequestKind, ScenarioConfig, travel_time
from .errors import InputError
from .learner.fy import PerturbConfig
from .learner.training import TrainConfig

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {
    "id": "call_id", "received": "received", "lat": "lat", "lon": "lon",
    "transported": "transported", "on_scene": "on_scene_s", "hospital": "hospital_id",
}
TIE_OFFSET = 0.001  # seconds between calls that share a timestamp
MAX_SKIPPED = 0.05
_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def _parse_time(text: str) -> datetime:
    t = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    return t if t.tzinfo else t.replace(tzinfo=timezone.utc)


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def nearest(loc: Location, candidates: Sequence[Location], speed: float) -> Location:
    return min(candidates, key=lambda h: (travel_time(loc, h, speed), h))


def separate_ties(times: list[float]) -> list[float]:
    """Shift calls sharing a timestamp apart by 1 ms each, in order."""
    out = []
    prev = -math.inf
    for t in times:
        if t <= prev:
            t = prev + TIE_OFFSET
        out.append(t)
        prev = t
    return out


def parse_calls(stream: TextIO | str, scenario: ScenarioConfig, *, origin: datetime | None = None,
                dropoff_s: float = 600.0, columns: dict | None = None,
                bbox: tuple[float, float, float, float] | None = None) -> list[Request]:
    """Emergency requests from a call-record CSV.

    Entry times are seconds after ``origin`` (default: midnight UTC of the
    earliest call). Transported patients go to the nearest hospital; their
    service time is the on-scene time, the drive to the hospital and a fixed
    hand-over time ``dropoff_s``. ``bbox`` is ``(lat_min, lat_max, lon_min,
    lon_max)``.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    cols = dict(DEFAULT_COLUMNS, **(columns or {}))
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        log.warning("empty call file")
        return []
    required = [cols[k] for k in ("id", "received", "lat", "lon", "transported", "on_scene")]
    missing = [c for c in required if c not in reader.fieldnames]
    if missing:
        raise InputError(f"call file lacks columns: {', '.join(missing)}")
    rows, skipped, total = [], 0, 0
    for line, rec in enumerate(reader, start=2):
        total += 1
        try:
            when = _parse_time(rec[cols["received"]])
            loc = Location(float(rec[cols["lat"]]), float(rec[cols["lon"]]))
            if bbox is not None and not (bbox[0] <= loc.lat <= bbox[1]
                                         and bbox[2] <= loc.lon <= bbox[3]):
                raise ValueError("outside the bounding box")
            transported = _parse_bool(rec[cols["transported"]])
            on_scene = float(rec[cols["on_scene"]])
            if not math.isfinite(on_scene) or on_scene < 0:
                raise ValueError("bad on-scene duration")
            rows.append((when, rec[cols["id"]].strip(), loc, transported, on_scene))
        except (ValueError, TypeError, KeyError, AttributeError) as exc:
            skipped += 1
            log.warning("line %d skipped: %s", line, exc)
    if total == 0:
        log.warning("call file has no records")
        return []
    if skipped > MAX_SKIPPED * total:
        raise InputError(f"{skipped} of {total} call records malformed")
    rows.sort(key=lambda r: (r[0], r[1]))
    if origin is None:
        first = rows[0][0]
        origin = first.replace(hour=0, minute=0, second=0, microsecond=0)
    speed = scenario.speed_kmh
    times = separate_ties([(r[0] - origin).total_seconds() for r in rows])
    out = []
    for t, (_, cid, loc, transported, on_scene) in zip(times, rows):
        if t < 0:
            raise InputError(f"call {cid} precedes the time origin")
        if transported:
            if not scenario.hospitals:
                raise InputError("transported call but no hospitals configured")
            h = nearest(loc, scenario.hospitals, speed)
            service = on_scene + travel_time(loc, h, speed) + dropoff_s
            out.append(Request.emergency(cid, loc, t, service, h))
        else:
            out.append(Request.emergency(cid, loc, t, on_scene))
    return out


# -- request stream files ----------------------------------------------------------------
def request_to_dict(r: Request) -> dict:
    return {"id": r.id, "kind": r.kind.value, "origin": [r.origin.lat, r.origin.lon],
            "entry_time": r.entry_time, "dropoff": [r.dropoff.lat, r.dropoff.lon],
            "service_time": r.service_time}


def request_from_dict(d: dict) -> Request:
    return Request(d["id"], RequestKind(d["kind"]), Location(*d["origin"]), float(d["entry_time"]),
                   Location(*d["dropoff"]), float(d["service_time"]))


def dump_requests(reqs: Iterable[Request]) -> str:
    return "".join(json.dumps(request_to_dict(r)) + "\n" for r in reqs)


def load_requests(text: str) -> list[Request]:
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            try:
                out.append(request_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise InputError(f"request line {i}: {exc}") from exc
    return out


# -- synthetic streams --------------------------------------------------------------------
@dataclass
class Cluster:
    center: Location
    weight: float
    sd_km: float = 0.5


@dataclass
class SyntheticSpec:
    """Piecewise-constant hourly arrival rates (cycled over the horizon),
    a Gaussian-cluster spatial mixture, lognormal on-scene times and a
    transport probability."""

    hourly_rates: list[float]
    clusters: list[Cluster]
    service_median_s: float = 1200.0
    service_sigma: float = 0.4
    transport_prob: float = 0.0
    dropoff_s: float = 600.0
    seed: int = 0

    def __post_init__(self):
        if not self.hourly_rates or any(not (r >= 0 and math.isfinite(r))
                                        for r in self.hourly_rates):
            raise InputError("hourly rates must be finite and non-negative")
        if not self.clusters:
            raise InputError("need at least one spatial cluster")
        w = [c.weight for c in self.clusters]
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise InputError("cluster weights must be non-negative and sum to 1")
        if not 0 <= self.transport_prob <= 1:
            raise InputError("transport probability must lie in [0, 1]")
        if self.service_median_s <= 0 or self.service_sigma < 0:
            raise InputError("bad service-time parameters")


def synthesize_scenario(spec: SyntheticSpec, horizon: float, scenario: ScenarioConfig | None = None,
                        *, prefix: str = "") -> list[Request]:
    """Non-homogeneous Poisson stream over ``[0, horizon)``."""
    rng = np.random.default_rng(spec.seed)
    times = []
    n_hours = int(math.ceil(horizon / 3600.0))
    for h in range(n_hours):
        lo, hi = h * 3600.0, min((h + 1) * 3600.0, horizon)
        lam = spec.hourly_rates[h % len(spec.hourly_rates)] * (hi - lo) / 3600.0
        k = rng.poisson(lam)
        times.extend(np.sort(rng.uniform(lo, hi, size=k)).tolist())
    times = separate_ties(times)
    weights = np.array([c.weight for c in spec.clusters])
    hospitals = scenario.hospitals if scenario is not None else ()
    speed = scenario.speed_kmh if scenario is not None else 30.0
    out = []
    for i, t in enumerate(times):
        c = spec.clusters[rng.choice(len(spec.clusters), p=weights)]
        dy, dx = (float(v) for v in rng.normal(0.0, c.sd_km, size=2))
        lat = c.center.lat + dy / 111.32
        lon = c.center.lon + dx / (111.32 * math.cos(math.radians(c.center.lat)))
        loc = Location(max(-90.0, min(90.0, lat)), (lon + 180.0) % 360.0 - 180.0)
        on_scene = float(spec.service_median_s * math.exp(spec.service_sigma * rng.normal()))
        transported = bool(rng.random() < spec.transport_prob)
        rid = f"{prefix}{i}" if prefix else i
        if transported and hospitals:
            hosp = nearest(loc, hospitals, speed)
            service = on_scene + travel_time(loc, hosp, speed) + spec.dropoff_s
            out.append(Request.emergency(rid, loc, t, service, hosp))
        else:
            out.append(Request.emergency(rid, loc, t, on_scene))
    return out


# -- configuration ------------------------------------------------------------------------
_SCHEMA = {
    "scenario": {
        "name": (str, "scenario"), "fleet_size": (int, 5), "waiting_locations": (list, None),
        "hospitals": (list, []), "initial_locations": (list, None), "horizon": (float, 21600.0),
        "warmup": (float, 3600.0), "cooldown": (float, 3600.0), "speed_kmh": (float, 30.0),
    },
    "mclp": {"kappa": (float, 600.0), "zeta": (int, 2), "cap": (int, 2),
             "cell_area_km2": (float, 0.737)},
    "train": {"epochs": (int, 250), "lr": (float, 0.001), "batch_size": (int, 1),
              "val_fraction": (float, 0.2), "seed": (int, 0)},
    "perturb": {"eps": (float, 1.0), "n_samples": (int, 50), "seed": (int, 0)},
    "model": {"variant": (str, "mlp"), "hidden": (list, [32, 32]), "activation": (str, "relu"),
              "corr_threshold": (float, 0.8)},
    "ingest": {"dropoff_s": (float, 600.0), "columns": (dict, {}), "bbox": (list, None)},
    "offline": {"node_limit": (int, None), "gamma": (float, 1e6)},
    "synth": {"hourly_rates": (list, [4.0]), "clusters": (list, None),
              "service_median_s": (float, 1200.0), "service_sigma": (float, 0.4),
              "transport_prob": (float, 0.0), "episodes": (int, 10)},
}


@dataclass
class RunConfig:
    scenario: ScenarioConfig | None
    train: TrainConfig
    perturb: PerturbConfig
    sections: dict = field(default_factory=dict)

    @property
    def speed_kmh(self) -> float:
        return self.sections["scenario"]["speed_kmh"]

    def get(self, section, key):
        return self.sections[section][key]

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        sy = self.sections["synth"]
        raw = sy["clusters"]
        if raw is None:
            if self.scenario is None:
                raise InputError("synth.clusters missing and no scenario to default from")
            wl = self.scenario.waiting_locations
            raw = [{"lat": w.lat, "lon": w.lon, "weight": 1.0 / len(wl)} for w in wl]
        try:
            clusters = [Cluster(Location(float(c["lat"]), float(c["lon"])), float(c["weight"]),
                                float(c.get("sd_km", 0.5))) for c in raw]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"synth.clusters: {exc}") from exc
        return SyntheticSpec([float(r) for r in sy["hourly_rates"]], clusters,
                             sy["service_median_s"], sy["service_sigma"], sy["transport_prob"],
                             self.sections["ingest"]["dropoff_s"], seed)


def _coerce(path, typ, value):
    if value is None:
        return None
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(f"{path}: expected a number, got {type(value).__name__}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InputError(f"{path}: expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, typ):
        raise InputError(f"{path}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def _locations(path, items):
    try:
        return [Location(float(a), float(b)) for a, b in items]
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: expected a list of [lat, lon] pairs ({exc})") from exc


def parse_config(data: dict, strict: bool = True) -> RunConfig:
    if not isinstance(data, dict):
        raise InputError("configuration must be a JSON object")
    sections = {}
    for name in data:
        if name not in _SCHEMA and strict:
            raise InputError(f"unknown configuration key: {name}")
    for name, fields in _SCHEMA.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise InputError(f"{name}: expected an object")
        for key in raw:
            if key not in fields and strict:
                raise InputError(f"unknown configuration key: {name}.{key}")
        sec = {}
        for key, (typ, default) in fields.items():
            val = raw.get(key, default)
            sec[key] = _coerce(f"{name}.{key}", typ, val) if key in raw else default
        sections[name] = sec
    sc = sections["scenario"]
    scenario = None
    if sc["waiting_locations"]:
        init = sc["initial_locations"]
        scenario = ScenarioConfig(
            fleet_size=sc["fleet_size"],
            waiting_locations=_locations("scenario.waiting_locations", sc["waiting_locations"]),
            hospitals=_locations("scenario.hospitals", sc["hospitals"]),
            horizon=sc["horizon"], warmup=sc["warmup"], cooldown=sc["cooldown"],
            speed_kmh=sc["speed_kmh"],
            initial_locations=None if init is None else _locations("scenario.initial_locations",
                                                                   init),
            name=sc["name"],
        )
    tr = sections["train"]
    pt = sections["perturb"]
    return RunConfig(scenario, TrainConfig(epochs=tr["epochs"], lr=tr["lr"],
                                           batch_size=tr["batch_size"],
                                           val_fraction=tr["val_fraction"], seed=tr["seed"]),
                     PerturbConfig(pt["eps"], pt["n_samples"], pt["seed"]), sections)


def load_config(path, strict: bool = True) -> RunConfig:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise InputError(f"cannot read configuration {path}: {exc}") from exc
    try:
        data = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise InputError(f"configuration is not UTF-8 (byte {exc.start})") from exc
    except json.JSONDecodeError as exc:
        offset = len(raw.decode("utf-8")[:exc.pos].encode("utf-8"))
        raise InputError(f"malformed JSON at byte {offset}: {exc.msg}") from exc
    return parse_config(data, strict)
