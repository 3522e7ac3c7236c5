import random

import pytest

from ambulearn.core import Location, Request, ScenarioConfig

BASE = Location(37.77, -122.42)


def near(rng, spread=0.03, base=BASE):
    return Location(base.lat + rng.uniform(-spread, spread), base.lon + rng.uniform(-spread, spread))


def tiny_instance(rng, max_amb=3, max_req=4, max_wait=2, gap=900.0, compress=1.0):
    """Random instance inside the exhaustive-search limits."""
    M = rng.randint(1, max_amb)
    L = rng.randint(1, max_wait)
    n = rng.randint(0, max_req)
    sc = ScenarioConfig(M, [near(rng) for _ in range(L)], horizon=7200, warmup=0, cooldown=0,
                        initial_locations=[near(rng) for _ in range(M)])
    reqs, t = [], 0.0
    for i in range(n):
        t += rng.uniform(0, gap)
        reqs.append(Request.emergency(i, near(rng), t / compress, rng.uniform(300, 1500)))
    return sc, reqs


def random_instances(seed, count, **kw):
    rng = random.Random(seed)
    return [tiny_instance(rng, **kw) for _ in range(count)]


@pytest.fixture
def rng():
    return random.Random(0)
