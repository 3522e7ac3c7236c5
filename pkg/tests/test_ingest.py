import json
import logging
import math

import pytest

from ambulearn.core import Location, ScenarioConfig, travel_time
from ambulearn.errors import InputError
from ambulearn.ingest import (Cluster, SyntheticSpec, dump_requests, load_config, load_requests,
                              parse_calls, parse_config, synthesize_scenario)

A = Location(37.77, -122.42)
H = Location(37.78, -122.41)
SC = ScenarioConfig(1, [A], hospitals=[H], horizon=7200, warmup=0, cooldown=0)
HEAD = "call_id,received,lat,lon,transported,on_scene_s,hospital_id\n"


def test_untransported_call_stays_at_origin():
    reqs = parse_calls(HEAD + "c1,2024-03-01T08:00:00Z,37.76,-122.43,false,900,\n", SC)
    (r,) = reqs
    assert r.dropoff == r.origin and r.service_time == 900
    assert r.entry_time == 8 * 3600  # seconds after midnight UTC


def test_transported_call_goes_to_nearest_hospital():
    far = Location(38.2, -122.0)
    sc = ScenarioConfig(1, [A], hospitals=[far, H], horizon=7200, warmup=0, cooldown=0)
    (r,) = parse_calls(HEAD + "c1,2024-03-01T08:00:00,37.76,-122.43,true,900,\n", sc, dropoff_s=300)
    assert r.dropoff == H
    assert r.service_time == pytest.approx(900 + travel_time(r.origin, H) + 300)
    with pytest.raises(InputError):
        parse_calls(HEAD + "c1,2024-03-01T08:00:00,37.76,-122.43,true,900,\n",
                    ScenarioConfig(1, [A], horizon=7200, warmup=0, cooldown=0))


def test_duplicate_timestamps_are_separated():
    body = "".join(f"c{i},2024-03-01T08:00:00Z,37.76,-122.43,0,60,\n" for i in range(3))
    ts = [r.entry_time for r in parse_calls(HEAD + body, SC)]
    assert ts == pytest.approx([28800.0, 28800.001, 28800.002])


def test_empty_file_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert parse_calls("", SC) == []
        assert parse_calls(HEAD, SC) == []
    assert "empty" in caplog.text or "no records" in caplog.text


def test_missing_column():
    with pytest.raises(InputError, match="lat"):
        parse_calls("call_id,received,lon,transported,on_scene_s\n", SC)


def test_malformed_rows(caplog):
    good = "".join(f"c{i},2024-03-01T08:{i:02d}:00Z,37.76,-122.43,0,60,\n" for i in range(40))
    with caplog.at_level(logging.WARNING):
        reqs = parse_calls(HEAD + good + "bad,notatime,37.7,-122.4,0,60,\n", SC)
    assert len(reqs) == 40 and "line 42" in caplog.text
    bad = "".join(f"b{i},2024-03-01T09:00:00Z,xx,-122.43,0,60,\n" for i in range(3))
    with pytest.raises(InputError):
        parse_calls(HEAD + good + bad, SC)


def test_bounding_box_filter():
    body = "".join(f"c{i},2024-03-01T08:00:{i:02d}Z,37.76,-122.43,0,60,\n" for i in range(30))
    body += "far,2024-03-01T08:01:00Z,40.0,-100.0,0,60,\n"
    reqs = parse_calls(HEAD + body, SC, bbox=(37.0, 38.0, -123.0, -122.0))
    assert len(reqs) == 30 and "far" not in [r.id for r in reqs]


def test_request_stream_round_trip():
    spec = SyntheticSpec([5.0], [Cluster(A, 1.0)], transport_prob=0.5, seed=3)
    reqs = synthesize_scenario(spec, 7200, SC)
    assert load_requests(dump_requests(reqs)) == reqs


def test_zero_rate_gives_empty_stream():
    assert synthesize_scenario(SyntheticSpec([0.0], [Cluster(A, 1.0)]), 21600) == []


def test_poisson_mean_count():
    lam, hours, seeds = 6.12, 6, 1000
    counts = [len(synthesize_scenario(SyntheticSpec([lam], [Cluster(A, 1.0)], seed=s), hours * 3600))
              for s in range(seeds)]
    mean = sum(counts) / seeds
    sigma = math.sqrt(lam * hours / seeds)
    assert abs(mean - lam * hours) <= 3 * sigma


def test_synthesis_is_seeded():
    spec = SyntheticSpec([3.0, 8.0], [Cluster(A, 0.7), Cluster(H, 0.3)], seed=9)
    a, b = synthesize_scenario(spec, 10800), synthesize_scenario(spec, 10800)
    assert a == b
    assert [r.entry_time for r in a] == sorted(r.entry_time for r in a)
    spec.seed = 10
    assert synthesize_scenario(spec, 10800) != a


def test_spec_validation():
    with pytest.raises(InputError):
        SyntheticSpec([-1.0], [Cluster(A, 1.0)])
    with pytest.raises(InputError):
        SyntheticSpec([1.0], [Cluster(A, 0.5)])


# -- configuration ----------------------------------------------------------------------------
BASE = {"scenario": {"waiting_locations": [[37.77, -122.42], [37.78, -122.41]]}}


def test_config_defaults():
    cfg = parse_config(BASE)
    assert cfg.scenario.fleet_size == 5 and cfg.speed_kmh == 30.0
    assert cfg.get("mclp", "kappa") == 600 and cfg.get("mclp", "zeta") == 2
    assert cfg.train.epochs == 250 and cfg.perturb.n_samples == 50


def test_config_speed_override():
    cfg = parse_config({"scenario": dict(BASE["scenario"], speed_kmh=60)})
    assert cfg.speed_kmh == 60.0
    a, b = cfg.scenario.waiting_locations
    assert cfg.scenario.travel(a, b) == pytest.approx(travel_time(a, b) / 2)


def test_config_errors(tmp_path):
    with pytest.raises(InputError, match="unknown configuration key: mclp.kapa"):
        parse_config(dict(BASE, mclp={"kapa": 5}))
    with pytest.raises(InputError, match="train.epochs"):
        parse_config(dict(BASE, train={"epochs": "many"}))
    p = tmp_path / "bad.json"
    p.write_text('{"scenario": {"fleet_size": 3,}}')
    with pytest.raises(InputError, match="byte 30"):
        load_config(p)
    p.write_text(json.dumps(BASE))
    assert load_config(p).scenario.fleet_size == 5
