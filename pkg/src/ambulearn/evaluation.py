"""Response-time metrics, two-sample KS tests and policy reports."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import RequestKind
from .errors import InputError, UndefinedMetricError

KS_TERMS = 100
KS_ALPHA = 0.01
KS_MIN_SAMPLE = 20
CSV_COLUMNS = ["policy", "scenario", "fleet", "mrt_s", "dev_vs_CIFS_pct", "dev_vs_CICS_pct",
               "util_mean", "served"]


# -- Kolmogorov-Smirnov ---------------------------------------------------------------------
@dataclass(frozen=True)
class KsResult:
    d: float
    p_value: float
    n: int
    m: int
    reject: bool
    small_sample: bool  # the asymptotic p-value is unreliable below 20 points per side


def ks_statistic(a, b) -> float:
    """Sup-distance between the two empirical CDFs via a merged sweep."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = len(a), len(b)
    i = j = 0
    d = 0.0
    while i < n and j < m:
        x = min(a[i], b[j])
        while i < n and a[i] == x:
            i += 1
        while j < m and b[j] == x:
            j += 1
        d = max(d, abs(i / n - j / m))
    # once one side is exhausted the gap only shrinks toward zero
    return d


def kolmogorov_sf(lam: float, terms: int = KS_TERMS) -> float:
    """P(K > lam) for the Kolmogorov distribution.

    The alternating series converges slowly for small ``lam``, so below 1 the
    equivalent theta-function form of the CDF is used instead.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        s = sum(math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8 * lam * lam))
                for k in range(1, terms + 1))
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * s))
    s = sum((-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam) for k in range(1, terms + 1))
    return min(1.0, max(0.0, 2.0 * s))


def ks_two_sample(a, b, alpha: float = KS_ALPHA) -> KsResult:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise InputError("KS test needs two non-empty samples")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InputError("KS samples must be finite")
    n, m = len(a), len(b)
    d = ks_statistic(a, b)
    p = kolmogorov_sf(math.sqrt(n * m / (n + m)) * d)
    return KsResult(d, p, n, m, p < alpha, min(n, m) < KS_MIN_SAMPLE)


# -- episode metrics --------------------------------------------------------------------------
@dataclass
class EpisodeMetrics:
    responses: list[float]
    busy: list[float]  # seconds per ambulance inside the window
    window: tuple[float, float]
    served: int

    @property
    def mrt(self):
        return float(np.mean(self.responses)) if self.responses else math.nan

    @property
    def utilization(self):
        length = self.window[1] - self.window[0]
        return [b / length for b in self.busy]


def episode_metrics(schedules: Sequence[Sequence], window: tuple[float, float]) -> EpisodeMetrics:
    """Elapsed responses of emergencies entering inside ``window`` and the
    busy time (dispatch to completion) each ambulance spends inside it."""
    lo, hi = window
    if not hi > lo:
        raise InputError("evaluation window is empty")
    responses, busy, served = [], [], 0
    for sched in schedules:
        b = 0.0
        for e in sched:
            if e.kind is not RequestKind.EMERGENCY:
                continue
            served += 1
            if lo <= e.entry_time <= hi:
                responses.append(e.elapsed_response)
            b += max(0.0, min(e.completion_time, hi) - max(e.dispatch_time, lo))
        busy.append(b)
    return EpisodeMetrics(responses, busy, (lo, hi), served)


@dataclass
class PolicyReport:
    policy: str
    scenario: str
    fleet: int
    mrt: float
    utilization: list[float]
    served: int
    episodes: list[dict] = field(default_factory=list)
    deviation: dict[str, float] = field(default_factory=dict)

    @property
    def util_mean(self):
        return float(np.mean(self.utilization)) if self.utilization else 0.0

    def to_json(self):
        return {"policy": self.policy, "scenario": self.scenario, "fleet": self.fleet,
                "mrt_s": self.mrt, "utilization": self.utilization, "util_mean": self.util_mean,
                "served": self.served, "deviation_pct": self.deviation, "episodes": self.episodes}


def evaluate_policy(traces, window=None, *, policy=None, scenario=None) -> PolicyReport:
    """Aggregate report over episode traces (or plain schedule lists).

    The mean response averages every in-window emergency across episodes;
    utilization is averaged per ambulance over episodes.
    """
    traces = list(traces)
    if not traces:
        raise InputError("no episodes to evaluate")
    per, responses, utils = [], [], []
    served = 0
    for t in traces:
        scheds = t.schedules if hasattr(t, "schedules") else t
        win = window if window is not None else getattr(t, "window", None)
        if win is None:
            raise InputError("evaluation window unknown")
        em = episode_metrics(scheds, win)
        responses += em.responses
        utils.append(em.utilization)
        served += em.served
        per.append({"mrt_s": em.mrt, "responses": em.responses,
                    "utilization": em.utilization, "served": em.served})
    if not responses:
        raise UndefinedMetricError("no emergencies inside the evaluation window")
    first = traces[0]
    return PolicyReport(
        policy or getattr(first, "policy", "policy"),
        scenario or getattr(first, "scenario", "scenario"),
        len(utils[0]), float(np.mean(responses)),
        np.mean(np.array(utils), axis=0).tolist(), served, per)


def deviation(a: float, b: float) -> float:
    """Relative deviation of ``a`` from baseline ``b``."""
    if b == 0:
        raise InputError("baseline mean response is zero")
    return (a - b) / b


def compare(reports: Sequence[PolicyReport], baselines=("CIFS", "CICS")) -> list[PolicyReport]:
    """Fill each report's percentage deviation against every named baseline
    evaluated on the same scenario and fleet size."""
    index = {(r.policy, r.scenario, r.fleet): r for r in reports}
    for r in reports:
        for b in baselines:
            base = index.get((b, r.scenario, r.fleet))
            if base is not None:
                r.deviation[b] = 100.0 * deviation(r.mrt, base.mrt)
    return list(reports)


def _fmt(x):
    return "" if x is None else repr(float(x))


def report_csv(reports: Sequence[PolicyReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([r.policy, r.scenario, r.fleet, _fmt(r.mrt), _fmt(r.deviation.get("CIFS")),
                    _fmt(r.deviation.get("CICS")), _fmt(r.util_mean), r.served])
    return buf.getvalue()


def emit_report(reports: Sequence[PolicyReport], out_dir, stem: str = "report",
                baselines=("CIFS", "CICS")) -> list[str]:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns the paths."""
    reports = list(reports)
    if not reports:
        raise InputError("no reports to emit")
    compare(reports, baselines)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    json_path = os.path.join(out_dir, f"{stem}.json")
    with open(csv_path, "w", newline="") as f:
        f.write(report_csv(reports))
    with open(json_path, "w") as f:
        json.dump([r.to_json() for r in reports], f, indent=2, sort_keys=True)
        f.write("\n")
    return [csv_path, json_path]


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for row in rows:
        d = dict(row)
        for k in ("mrt_s", "dev_vs_CIFS_pct", "dev_vs_CICS_pct", "util_mean"):
            d[k] = float(d[k]) if d[k] != "" else None
        d["fleet"] = int(d["fleet"])
        d["served"] = int(d["served"])
        out.append(d)
    return out
