import random

import pytest

from ambulearn.benchmarks import CICS
from ambulearn.core import Location, Request, RequestKind, ScenarioConfig, respond
from ambulearn.errors import ContractError
from ambulearn.simulator import DISPATCH, REDEPLOY, Action, Simulator, run_episode

from conftest import random_instances

A, B, C = Location(37.77, -122.42), Location(37.78, -122.41), Location(37.76, -122.43)


def scen(m=2, wl=(A, B, C), init=None, **kw):
    kw.setdefault("horizon", 7200.0)
    kw.setdefault("warmup", 0.0)
    kw.setdefault("cooldown", 0.0)
    return ScenarioConfig(m, list(wl), initial_locations=init, **kw)


def test_two_idle_one_emergency_gives_two_edges():
    sim = Simulator(scen(2), [Request.emergency(0, C, 10.0, 100.0)])
    st = sim.initial_state()
    acts = sim.feasible_actions(st)
    assert st.is_dispatch_epoch and [a.ambulance for a in acts] == [0, 1]


def test_no_idle_ambulance_queues_the_request():
    reqs = [Request.emergency(0, C, 10.0, 1000.0), Request.emergency(1, B, 20.0, 100.0)]
    sim = Simulator(scen(1, init=[A]), reqs)
    events = []
    st = sim.initial_state(events.append)
    st = sim.step(st, sim.feasible_actions(st)[0], events.append)
    assert [e.kind for e in events] == ["queued", "forced"]
    assert st.queue == ()
    # the freed ambulance went straight to the queued request
    sched = st.ambulances[0].schedule
    assert [e.request_id for e in sched] == [0, 1]
    assert sched[1].dispatch_time == pytest.approx(sched[0].completion_time)


def test_freed_ambulance_with_empty_queue_gets_one_edge_per_location():
    sim = Simulator(scen(1, init=[A]), [Request.emergency(0, C, 10.0, 100.0)])
    st = sim.initial_state()
    st = sim.step(st, sim.feasible_actions(st)[0])
    acts = sim.feasible_actions(st)
    assert not st.is_dispatch_epoch and st.decider == 0
    assert [(a.kind, a.target) for a in acts] == [(REDEPLOY, 0), (REDEPLOY, 1), (REDEPLOY, 2)]


def test_dispatch_extends_schedule_with_response_algebra():
    r = Request.emergency(0, C, 10.0, 100.0)
    sim = Simulator(scen(1, init=[A]), [r])
    st = sim.step(sim.initial_state(), sim.feasible_actions(sim.initial_state())[0])
    e = st.ambulances[0].schedule[0]
    u, c = respond(0.0, A, r)
    assert (e.response_time, e.completion_time) == (u, c)
    assert st.total_response == pytest.approx(u - 10.0)


def test_redeployment_adds_zero_service_request():
    sim = Simulator(scen(1, init=[A]), [Request.emergency(0, C, 10.0, 100.0)])
    st = sim.initial_state()
    st = sim.step(st, sim.feasible_actions(st)[0])
    st = sim.step(st, sim.feasible_actions(st)[1])
    e = st.ambulances[0].schedule[-1]
    assert e.kind is RequestKind.REDEPLOYMENT
    assert e.completion_time == e.response_time
    assert st.ambulances[0].position == B and st.terminal


def test_infeasible_decision_is_a_contract_error():
    r = Request.emergency(0, C, 10.0, 100.0)
    sim = Simulator(scen(1, init=[A]), [r])
    st = sim.initial_state()
    with pytest.raises(ContractError):
        sim.step(st, Action(DISPATCH, 5, r, r.id))


def test_policy_returning_bad_index_aborts():
    sim_reqs = [Request.emergency(0, C, 10.0, 100.0)]
    with pytest.raises(ContractError, match="infeasible"):
        run_episode(scen(1, init=[A]), sim_reqs, lambda s, x, acts: 99)


def test_zero_requests_empty_trace():
    tr = run_episode(scen(2), [], CICS())
    assert tr.events == [] and all(a.schedule == () for a in tr.final_state.ambulances)


def test_one_request_one_ambulance_trace():
    tr = run_episode(scen(1, init=[A]), [Request.emergency(0, C, 10.0, 100.0)], CICS())
    assert [e.kind for e in tr.decisions] == [DISPATCH, REDEPLOY]
    assert tr.served_count == 1


def test_emergency_processed_before_free_at_equal_time():
    # ambulance 0 frees exactly when the second call arrives
    r0 = Request.emergency(0, A, 0.0, 500.0)
    r1 = Request.emergency(1, B, 500.0, 100.0)
    sim = Simulator(scen(2, init=[A, C]), [r0, r1])
    st = sim.initial_state()
    st = sim.step(st, [a for a in sim.feasible_actions(st) if a.ambulance == 0][0])
    assert st.clock == 500.0 and st.is_dispatch_epoch and st.batch[0].id == 1
    # ambulance 0 still counts as busy, so only ambulance 1 is offered
    assert [a.ambulance for a in sim.feasible_actions(st)] == [1]


def test_simultaneous_frees_in_id_order():
    reqs = [Request.emergency(0, A, 0.0, 300.0), Request.emergency(1, A, 0.0 + 1e-3, 300.0 - 1e-3)]
    sim = Simulator(scen(2, init=[A, A]), reqs)
    st = sim.initial_state()
    st = sim.step(st, sim.feasible_actions(st)[1])  # ambulance 1 takes call 0
    st = sim.step(st, sim.feasible_actions(st)[0])  # ambulance 0 takes call 1
    assert st.decider == 0 and st.clock == pytest.approx(300.0)
    st = sim.step(st, sim.feasible_actions(st)[0])
    assert st.decider == 1


def test_determinism_and_invariants():
    for sc, reqs in random_instances(3, 40, compress=3.0):
        t1 = run_episode(sc, reqs, CICS())
        t2 = run_episode(sc, reqs, CICS())
        assert t1.to_jsonl() == t2.to_jsonl()
        times = [e.time for e in t1.events]
        assert times == sorted(times)
        served = [e.request_id for s in t1.schedules for e in s if e.kind is RequestKind.EMERGENCY]
        assert sorted(served) == sorted(r.id for r in reqs)
        for s in t1.schedules:
            done = [e.completion_time for e in s]
            assert all(x <= y for x, y in zip(done, done[1:]))
            ems = [e for e in s if e.kind is RequestKind.EMERGENCY]
            for x, y in zip(ems, ems[1:]):  # never double-booked
                assert y.dispatch_time >= x.completion_time - 1e-9


def test_chain_recomputation_matches_stored_schedule():
    rng = random.Random(5)
    for sc, reqs in random_instances(9, 30, compress=2.0):
        tr = run_episode(sc, reqs, lambda s, x, acts: rng.randrange(len(acts)))
        by_id = {r.id: r for r in reqs}
        for m, sched in enumerate(tr.schedules):
            c, pos = 0.0, sc.start_locations()[m]
            for e in sched:
                if e.kind is RequestKind.EMERGENCY:
                    r = by_id[e.request_id]
                    u, c2 = respond(c, pos, r)
                    assert (u, c2) == (e.response_time, e.completion_time)
                    c, pos = c2, r.dropoff
                else:
                    c, pos = e.completion_time, sc.waiting_locations[int(str(e.request_id).rsplit("w", 1)[1])]
