import random

import pytest

from ambulearn.core import Location, travel_time
from ambulearn.errors import InfeasibleError, InputError
from ambulearn.mclp import (CELL_AREA_KM2, HexGrid, MclpInstance, bin_regions, brute_force_mclp,
                            evaluate, solve_mclp)

from conftest import near

O = Location(37.77, -122.42)


def test_single_station_takes_whole_fleet():
    inst = MclpInstance([O], [1.0], [O], fleet_size=2, zeta=2, cap=2)
    sol = solve_mclp(inst)
    assert sol.x == [2] and sol.y == [2] and sol.objective == 2.0
    assert sol.home_bases() == {0: 0, 1: 0}


def test_defaults():
    inst = MclpInstance([O], [1.0], [O, O], fleet_size=3)
    assert (inst.kappa, inst.zeta, inst.cap) == (600.0, 2, 2)
    assert CELL_AREA_KM2 == 0.737


def test_input_validation():
    with pytest.raises(InputError):
        MclpInstance([O], [0.5], [O], 1)
    with pytest.raises(InputError):
        MclpInstance([O], [1.0], [], 1)
    with pytest.raises(InputError):
        MclpInstance([O], [1.0], [O], 1, kappa=0.0)


def test_uncoverable_region_is_named():
    far = Location(38.5, -121.0)
    inst = MclpInstance([O, far], [0.5, 0.5], [O, O], fleet_size=4)
    with pytest.raises(InfeasibleError) as err:
        solve_mclp(inst)
    assert "1" in str(err.value)


def random_instance(rng, S=None, G=None):
    S = S or rng.randint(2, 4)
    G = G or rng.randint(1, 5)
    w = [rng.random() + 0.01 for _ in range(G)]
    return MclpInstance([near(rng, 0.03) for _ in range(G)], [v / sum(w) for v in w],
                        [near(rng, 0.03) for _ in range(S)], fleet_size=rng.randint(1, 2 * S),
                        kappa=rng.uniform(300, 900), zeta=rng.randint(0, 2))


def test_matches_brute_force():
    rng = random.Random(5)
    solved = 0
    for _ in range(200):
        inst = random_instance(rng)
        try:
            bf = brute_force_mclp(inst)
        except InfeasibleError:
            with pytest.raises(InfeasibleError):
                solve_mclp(inst)
            continue
        sol = solve_mclp(inst)
        assert sol.objective == pytest.approx(bf.objective, abs=1e-12)
        assert sol.x == bf.x
        solved += 1
    assert solved > 50


def test_more_ambulances_never_hurt():
    rng = random.Random(6)
    for _ in range(60):
        inst = random_instance(rng, S=3)
        vals = []
        for m in range(inst.zeta, 7):
            inst.fleet_size = m
            try:
                vals.append(solve_mclp(inst).objective)
            except InfeasibleError:
                vals.append(None)
        feas = [v for v in vals if v is not None]
        assert all(b >= a - 1e-12 for a, b in zip(feas, feas[1:]))


def test_solution_is_feasible():
    rng = random.Random(7)
    for _ in range(50):
        inst = random_instance(rng)
        try:
            sol = solve_mclp(inst)
        except InfeasibleError:
            continue
        assert evaluate(inst, sol.x) == pytest.approx(sol.objective)
        assert sum(sol.x) == inst.fleet_size and max(sol.x) <= inst.cap
        assert min(sol.y) >= inst.zeta


def test_cover_uses_travel_time_threshold():
    a = Location(37.77, -122.42)
    b = Location(37.77 + 2.5 / 111.32, -122.42)  # about 2.5 km north: 300 s at 30 km/h
    t = travel_time(a, b)
    assert MclpInstance([b], [1.0], [a], 1, kappa=t + 1).cover == [[0]]
    assert MclpInstance([b], [1.0], [a], 1, kappa=t - 1).cover == [[]]


def test_bin_regions():
    assert [r.count for r in bin_regions([O, O, O])] == [3]
    g = HexGrid(O)
    assert g.cell(g.center((2, -1))) == (2, -1)
    far = Location(37.80, -122.42)
    regs = bin_regions([O, O, far], grid=g)
    assert sorted(r.count for r in regs) == [1, 2]
    assert sum(r.mu for r in regs) == pytest.approx(1.0)
    with pytest.raises(InputError):
        bin_regions([])


def test_hex_cell_area():
    g = HexGrid(O)
    s = g.side_km
    assert 1.5 * 3 ** 0.5 * s * s == pytest.approx(CELL_AREA_KM2)
