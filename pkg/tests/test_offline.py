import json
import random
import statistics
import time

import pytest

from ambulearn.core import Location, Request, ScenarioConfig, travel_time
from ambulearn.errors import InfeasibleError, InputError
from ambulearn.offline.bruteforce import brute_force_offline
from ambulearn.offline.digraph import SINK, SOURCE, build_digraph, linearization_violations
from ambulearn.offline.solver import OfflineSolution, solve_offline_hard, solve_offline_soft
from ambulearn.simulator import Simulator

from conftest import near, random_instances

A, B = Location(37.77, -122.42), Location(37.79, -122.42)
W1, W2 = Location(37.76, -122.40), Location(37.78, -122.44)


def sc1(m=1, wl=(W1, W2), init=(A,)):
    return ScenarioConfig(m, list(wl), horizon=7200, warmup=0, cooldown=0,
                          initial_locations=list(init))


def test_digraph_rules_on_smallest_instance():
    g = build_digraph(sc1(), [Request.emergency(0, B, 0.0, 100.0)])
    assert len(g.vertices) == 6
    want = {(SOURCE, ("m", 0)), (("m", 0), ("e", 0)), (("m", 0), SINK), (("e", 0), ("w", 0, 0)),
            (("e", 0), ("w", 0, 1)), (("w", 0, 0), SINK), (("w", 0, 1), SINK)}
    assert set(g.arcs) == want


def test_digraph_without_emergencies():
    g = build_digraph(sc1(2, init=(A, B)), [])
    assert set(g.arcs) == {(SOURCE, ("m", 0)), (SOURCE, ("m", 1)), (("m", 0), SINK),
                           (("m", 1), SINK)}


def test_no_conditional_arc_between_simultaneous_requests():
    g = build_digraph(sc1(), [Request.emergency(0, B, 50.0), Request.emergency(1, A, 50.0)])
    assert not g.has_arc(("e", 0), ("e", 1)) and not g.has_arc(("e", 1), ("e", 0))
    g = build_digraph(sc1(), [Request.emergency(0, B, 50.0), Request.emergency(1, A, 60.0)])
    assert g.arcs[(("e", 0), ("e", 1))].conditional


def test_digraph_is_acyclic_and_json():
    sc, reqs = random_instances(1, 1, max_req=4)[0]
    g = build_digraph(sc, reqs)
    order, seen = [], set()

    def visit(v, stack):
        assert v not in stack, "cycle"
        if v in seen:
            return
        for w in g.out[v]:
            visit(w, stack | {v})
        seen.add(v)
        order.append(v)

    visit(SOURCE, frozenset())
    json.dumps(g.to_json())


def test_single_emergency_objective_is_travel_time():
    g = build_digraph(sc1(), [Request.emergency(0, B, 0.0, 100.0)])
    sol = solve_offline_hard(g)
    assert sol.objective == pytest.approx(travel_time(A, B))
    assert sol.paths[0][:3] == [SOURCE, ("m", 0), ("e", 0)] and sol.paths[0][-1] == SINK
    assert sol.paths[0][3][0] == "w"


def test_empty_request_set():
    sol = solve_offline_hard(build_digraph(sc1(), []))
    assert sol.objective == 0 and sol.decisions == []


def test_matches_brute_force_two_ambulances_three_requests():
    rng = random.Random(11)
    for _ in range(20):
        sc = ScenarioConfig(2, [near(rng), near(rng)], horizon=7200, warmup=0, cooldown=0,
                            initial_locations=[near(rng), near(rng)])
        reqs = [Request.emergency(i, near(rng), rng.uniform(0, 1200), rng.uniform(300, 1500))
                for i in range(3)]
        sol = solve_offline_hard(build_digraph(sc, reqs))
        bf = brute_force_offline(sc, reqs)
        assert sol.objective == pytest.approx(bf.objective, abs=1e-6)
        assert sol.key == bf.key


def test_brute_force_refuses_large_instances():
    sc = ScenarioConfig(4, [W1], horizon=7200, warmup=0, cooldown=0)
    with pytest.raises(InputError):
        brute_force_offline(sc, [])


def test_brute_force_symmetric_ambulances():
    sc = ScenarioConfig(2, [W1], horizon=7200, warmup=0, cooldown=0, initial_locations=[A, A])
    reqs = [Request.emergency(0, B, 0.0, 600.0)]
    bf = brute_force_offline(sc, reqs)
    assert bf.objective == pytest.approx(travel_time(A, B))


def test_solution_structure_and_linearization():
    for sc, reqs in random_instances(21, 40, compress=3.0):
        g = build_digraph(sc, reqs)
        sol = solve_offline_hard(g)
        inner = [v for p in sol.paths for v in p[1:-1]]
        assert len(inner) == len(set(inner)), "paths share a vertex"
        assert len(sol.paths) == sc.fleet_size
        assert all(g.has_arc(u, v) for u, v in sol.selected_arcs)
        into_e = sum(a for (u, v), a in sol.alpha.items() if v[0] == "e")
        assert into_e == pytest.approx(sol.objective, abs=1e-6)
        x = {arc: 1 for arc in sol.selected_arcs}
        assert linearization_violations(g, x, sol.alpha, sol.beta) == []
        for (u, v), b in sol.beta.items():  # direct continuation only for queued requests
            if u[0] == "e" and v[0] == "e":
                assert b > 0


def test_soft_gamma_zero_drops_everything():
    sc, reqs = random_instances(4, 1, max_req=4)[0]
    reqs = reqs or [Request.emergency(0, B, 0.0)]
    sol = solve_offline_soft(build_digraph(sc, reqs), 0.0)
    assert sol.objective == 0 and sol.served == 0 and len(sol.dropped) == len(reqs)


def test_soft_negative_gamma_rejected():
    with pytest.raises(InputError):
        solve_offline_soft(build_digraph(sc1(), []), -1.0)


def test_unreachable_emergency_dropped_in_soft_mode():
    reqs = [Request.emergency(0, B, 0.0, 100.0), Request.emergency(1, W1, 900.0, 100.0)]
    g = build_digraph(sc1(), reqs)
    for u in g.in_arcs(("e", 1)):
        g.remove_arc(u, ("e", 1))
    with pytest.raises(InfeasibleError) as err:
        solve_offline_hard(g)
    assert ("e", 1) in err.value.unservable
    soft = solve_offline_soft(g, 1e6)
    bf = brute_force_offline(sc1(), reqs, graph=g, gamma=1e6)
    assert soft.dropped == [1] and soft.served == 1
    assert soft.objective == pytest.approx(bf.objective)


def test_solution_json_round_trip():
    sc, reqs = random_instances(8, 1, max_req=3)[0]
    sol = solve_offline_hard(build_digraph(sc, reqs))
    back = OfflineSolution.from_json(json.loads(json.dumps(sol.to_json())))
    assert back.decisions == [tuple(d) for d in sol.decisions]
    assert back.objective == sol.objective


def test_replay_reproduces_objective():
    for sc, reqs in random_instances(12, 30, compress=2.0):
        sol = solve_offline_hard(build_digraph(sc, reqs))
        sim = Simulator(sc, reqs)
        st = sim.initial_state()
        for d in sol.decisions:
            st = sim.step(st, next(a for a in sim.feasible_actions(st) if a.key == tuple(d)))
        assert st.terminal
        assert st.total_response == pytest.approx(sol.objective, abs=1e-6)


def test_hard_vs_soft_runtime_report(capsys):
    hard, soft = [], []
    for sc, reqs in random_instances(30, 30, compress=2.0):
        g = build_digraph(sc, reqs)
        t0 = time.perf_counter()
        solve_offline_hard(g)
        t1 = time.perf_counter()
        solve_offline_soft(g, 1e6)
        hard.append(t1 - t0)
        soft.append(time.perf_counter() - t1)
    with capsys.disabled():
        print(f"\nmedian solve time: hard {statistics.median(hard) * 1e3:.2f} ms, "
              f"soft {statistics.median(soft) * 1e3:.2f} ms")


def _best_continuation(sim, st):
    if st.terminal:
        return st.total_response
    return min(_best_continuation(sim, sim.step(st, a)) for a in sim.feasible_actions(st))


def test_residual_solve_from_mid_episode_states():
    from ambulearn.benchmarks import CICS
    from ambulearn.offline.solver import solve_residual

    checked = 0
    for sc, reqs in random_instances(41, 25, compress=2.0):
        sim = Simulator(sc, reqs)
        full = solve_offline_hard(build_digraph(sc, reqs))
        st, opt = sim.initial_state(), sim.initial_state()
        for k, d in enumerate(full.decisions):
            # optimal prefix: the residual optimum is the full optimum
            assert solve_residual(sim, opt).total_response == pytest.approx(full.objective, abs=1e-6)
            opt = sim.step(opt, next(a for a in sim.feasible_actions(opt) if a.key == tuple(d)))
            if st.terminal:
                continue
            res = solve_residual(sim, st)
            assert res.total_response == pytest.approx(_best_continuation(sim, st), abs=1e-6)
            acts = sim.feasible_actions(st)
            st = sim.step(st, acts[CICS()(sim, st, acts)])
            checked += 1
    assert checked > 40


def test_redeploy_choice_matters_under_forced_queue_service():
    # Sending a freed ambulance to its closest station can be worse here: an
    # earlier completion hands it a queued call under first-come service.
    E = Request.emergency
    hosp = Location(37.763, -122.458)
    reqs = [
        E(3, Location(37.784291998932005, -122.4128989832167), 4758.930946051938, 681.1124166826688),
        E(4, Location(37.79191263303196, -122.41128674453323), 5016.844961880119, 2038.5206186905232,
          hosp),
        E(6, Location(37.78189124195493, -122.40287143072182), 5378.982403061915, 1153.425534911895),
        E(7, Location(37.78850132582556, -122.40620850609528), 6089.150277773995, 762.6841638848615),
        E(8, Location(37.747751461042625, -122.45877571839769), 6375.681275049027, 1118.34246993335),
        E(9, Location(37.73819679931676, -122.45350491149992), 6477.569623328218, 513.3218633279246),
        E(12, Location(37.779155529778826, -122.4047054788018), 7191.628175419883, 994.5976727221698),
        E(13, Location(37.781282970527045, -122.4010724549466), 7252.8337090274035, 900.6908041428293),
        E(14, Location(37.7922046243487, -122.4038480854646), 8188.46275931832, 967.9620143397065),
    ]
    sc = ScenarioConfig(3, [Location(37.76, -122.44), Location(37.78, -122.41),
                            Location(37.74, -122.41), Location(37.775, -122.46)],
                        hospitals=[hosp], horizon=10800, warmup=1800, cooldown=1800)
    g = build_digraph(sc, reqs)
    sim = Simulator(sc, reqs, arc_filter=g.has_arc)
    assert solve_offline_hard(g).objective == pytest.approx(
        _best_continuation(sim, sim.initial_state()), abs=1e-6)
