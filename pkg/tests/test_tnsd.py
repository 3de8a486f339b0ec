import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uwdt.globaldt.replica import EntryStatus, NSRow
from uwdt.globaldt.tgnso import SCENARIOS, cluster_topology
from uwdt.localdt.allocation import Demand
from uwdt.protocols.pmac import chain_offsets
from uwdt.protocols.routing import RoutingTable
from uwdt.sim.channel import ChannelParams, Position
from uwdt.sim.network import NodeSpec, SlottedNetwork
from uwdt.tnsd.events import EventResponder, NetworkEvent, default_events, simulate_lifetime
from uwdt.tnsd.slicing import (DEFAULT_SCHEME, RoleConflict, SliceConfig, SliceNode, SliceSchedule, chain_predictor,
                               combine, com_demand, decode_payload, dispatch, dispatch_payloads, optimize_config,
                               schedule_slices, slice_evaluator)
from uwdt.tnsd.tasks import (InfeasibleTimeline, Timeline, Unmappable, decompose, extract_demand,
                             validate_timeline)

from .tnsd_oracle import (as_assignment, assignment_ok, exclusive_overlap, exhaustive_feasible, random_instance,
                          random_slices)

CFG = SliceConfig()
PREDICT = chain_predictor(ChannelParams(range_m=CFG.comm_range_m), CFG)

# -- decomposition ----------------------------------------------------------------------------------

CRUISE = {"id": "c", "type": "cruise", "speed": 2.0, "upload_s": 60.0,
          "path": [[0, 0, -200], [4000, 0, -200], [4000, 4000, -200]],
          "alert_areas": [{"center": [2000, 0, -200], "radius": 500}, {"center": [4000, 3000, -200], "radius": 400}],
          "colour": "blue"}


def test_cruise_timeline_interleaves_rows():
    rt = decompose(CRUISE)
    assert rt.st.nav == ((0.0, 4000.0),)
    assert rt.st.det == ((750.0, 1250.0), (3300.0, 3700.0))
    assert rt.st.com == ((1250.0, 1310.0), (3700.0, 3760.0))
    assert not validate_timeline(rt.st)
    assert rt.ext == {"colour": "blue"}
    assert rt.com["number"] == 2


def test_data_mule_has_no_detection_row():
    rt = decompose({"id": "mule", "type": "mule", "nav": {"pathway": [[0, 0], [100, 0]], "intervals": [[0, 50]]},
                    "com": {"source": 1, "destination": 0, "size": 400, "number": 3, "intervals": [[50, 80]]}})
    assert not rt.det and rt.st.det == ()


def test_decompose_is_pure():
    assert decompose(CRUISE) == decompose(CRUISE)


def test_unmappable_task():
    with pytest.raises(Unmappable):
        decompose({"id": "x", "type": "custom", "notes": "nothing to do"})
    with pytest.raises(Unmappable):
        decompose({"id": "x", "type": "cruise"})


# -- timeline validation ----------------------------------------------------------------------------

def test_empty_and_reversed_timelines():
    assert validate_timeline(Timeline()) == []
    v = validate_timeline(Timeline(det=((0, 1), (5, 3))))
    assert [(x.row, x.kind, x.i) for x in v] == [("det", "reversed", 1)]


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), max_size=8))
def test_validator_matches_pairwise_oracle(raw):
    row = tuple(raw)
    found = {(v.kind, v.i, v.j) for v in validate_timeline(Timeline(com=row))}
    expect = {("reversed", i, None) for i, (s, e) in enumerate(row) if s > e}
    for i, j in itertools.combinations(range(len(row)), 2):
        (s1, e1), (s2, e2) = row[i], row[j]
        if s1 > s2:
            expect.add(("unsorted", i, j))
        if max(min(s1, e1), min(s2, e2)) < min(max(s1, e1), max(s2, e2)):
            expect.add(("overlap", i, j))
    assert found == expect


# -- demand -----------------------------------------------------------------------------------------

def com_task(number=10, window=100.0, urgency="normal"):
    return decompose({"id": "u", "type": "upload",
                      "com": {"source": 1, "destination": 0, "size": 400, "number": number, "urgency": urgency,
                              "intervals": [[0, window]]}})


def test_throughput_demand_arithmetic():
    td = extract_demand(com_task())
    assert td.com["throughput"] == pytest.approx(320.0)
    assert td.det == {} and td.nav == {}
    assert extract_demand(com_task(20)).com["throughput"] == pytest.approx(640.0)


def test_history_inflates_underachieved_demand():
    base = extract_demand(com_task()).com
    adj = extract_demand(com_task(), {"com.throughput": 0.8, "com.delay": 0.5}).com
    assert adj["throughput"] == pytest.approx(base["throughput"] / 0.8)
    assert adj["delay"] == pytest.approx(base["delay"] / 2)
    assert extract_demand(com_task(), {"com.throughput": 0.1}).com["throughput"] == pytest.approx(640.0)


def test_zero_window_with_work_is_infeasible():
    with pytest.raises(InfeasibleTimeline):
        extract_demand(com_task(window=0.0))


def test_demand_entries_are_in_range():
    td = extract_demand(decompose(CRUISE))
    for row in (td.com, td.det, td.nav):
        assert all(v >= 0 for v in row.values())
    assert 0 <= td.com["loss"] <= 1 and 0 <= td.det["coverage"] <= 1
    assert td.nav["speed"] == pytest.approx(2.0)


# -- slice scheduling -------------------------------------------------------------------------------

def row(n, kind, loc, energy=1e5, tasks=()):
    return NSRow(n, kind, loc, 0.0, energy, "", EntryStatus.OBSERVED, 1.0, tasks)


def det_task(nodes=1):
    return decompose({"id": "d", "type": "watch",
                      "det": {"location": [[0, 0, -100]], "nodes": nodes, "duration": 100, "intervals": [[0, 100]]}})


def test_single_capable_node_is_chosen():
    ns = [row(0, "sink", (0, 0, 0)), row(1, "buoy", (100, 0, 0)), row(2, "sn", (2000, 0, -100)),
          row(3, "sn", (9000, 0, -100))]
    rt = det_task()
    res = schedule_slices(rt, extract_demand(rt), ns)
    assert res.feasible and res.slices["det"].roles() == {2: "leader"}


def test_higher_residual_energy_wins_a_tie():
    ns = [row(0, "sink", (0, 0, 0)), row(1, "sn", (1000, 0, -100), energy=2000.0),
          row(2, "sn", (1000, 0, -100), energy=9000.0)]
    rt = det_task()
    res = schedule_slices(rt, extract_demand(rt), ns)
    assert list(res.slices["det"].roles()) == [2]


def test_infeasible_slice_is_flagged_with_partial_result():
    ns = [row(0, "sink", (0, 0, 0)), row(1, "sn", (1000, 0, -100))]
    rt = decompose({"id": "p", "type": "patrol", "nav": {"pathway": [[0, 0], [10, 0]], "intervals": [[0, 10]]},
                    "det": {"location": [[0, 0, -100]], "intervals": [[0, 10]]}})
    res = schedule_slices(rt, extract_demand(rt), ns)
    assert res.infeasible == ("nav",) and "det" in res.slices


def test_greedy_agrees_with_exhaustive_search():
    rng = np.random.default_rng(0)
    disagreements, feasible = 0, 0
    for _ in range(100):
        rt, td, ns = random_instance(rng)
        truth = exhaustive_feasible(rt, td, ns, CFG, PREDICT)
        res = schedule_slices(rt, td, ns, CFG, PREDICT)
        disagreements += truth != res.feasible
        feasible += truth
        if res.feasible:
            assert assignment_ok(rt, td, ns, CFG, PREDICT, as_assignment(res))
            for sl in res.slices.values():
                assert all(r.node in {x.node for x in ns} for r in sl.nodes)
    assert disagreements == 0
    assert 10 < feasible < 90


def test_scheduling_is_deterministic():
    rng = np.random.default_rng(3)
    rt, td, ns = random_instance(rng)
    a = schedule_slices(rt, td, ns, CFG, PREDICT)
    b = schedule_slices(rt, td, ns, CFG, PREDICT)
    assert a.slices == b.slices and combine(a.slices.values()) == combine(b.slices.values())


def test_flexible_assignment_keeps_minimum_energy_higher():
    # a fixed subnet keeps sending AUV 1 on every patrol while AUVs 3 and 4 sit idle
    def fleet(energy):
        return [row(0, "sink", (0, 0, 0))] + [row(n, "auv", (500.0 * n, 0, -100), energy[n]) for n in (1, 2, 3, 4)]

    rt = decompose({"id": "p", "type": "patrol", "nav": {"pathway": [[0, 0], [600, 0]], "intervals": [[0, 300]]}})
    td = extract_demand(rt)
    flex = {n: 40000.0 for n in (1, 2, 3, 4)}
    fixed = dict(flex)
    for _ in range(6):
        res = schedule_slices(rt, td, fleet(flex), CFG, PREDICT, capacity_j={n: 40000.0 for n in range(5)})
        for r in res.slices["nav"].nodes:
            flex[r.node] -= r.energy_j
        fixed[1] -= CFG.nav_power_w * 300
    assert min(flex.values()) > min(fixed.values())


# -- composition ------------------------------------------------------------------------------------

def sl(task, sub, ivs, roles):
    return SliceSchedule(task, sub, tuple(ivs), tuple(SliceNode(n, None, 0.0, r, 0.0, 2.0) for n, r in roles))


def test_disjoint_duties_ordered_by_start():
    out = combine([sl("b", "com", [(50, 60)], [(1, "relay")]), sl("a", "nav", [(0, 40)], [(1, "leader")])])
    assert [d.task for d in out[1].duties] == ["a", "b"]


def test_overlapping_relay_and_navigation_conflict():
    with pytest.raises(RoleConflict) as e:
        combine([sl("a", "nav", [(0, 40)], [(1, "leader")]), sl("b", "com", [(30, 60)], [(1, "relay")])])
    assert e.value.node == 1 and e.value.t == 30
    ok = combine([sl("a", "det", [(0, 40)], [(1, "leader")]), sl("b", "com", [(30, 60)], [(1, "relay")])])
    assert len(ok[1].duties) == 2


def test_combine_of_nothing_and_energy_budget():
    assert combine([]) == {}
    with pytest.raises(ValueError):
        combine([sl("a", "det", [(0, 10)], [(1, "leader")])], residual_j={1: 1.0})


@settings(max_examples=10_000, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_combine_never_emits_overlapping_exclusive_roles(seed):
    slices = random_slices(np.random.default_rng(seed))
    try:
        out = combine(slices)
    except RoleConflict:
        return
    assert not exclusive_overlap(out)
    # every duty traces back to exactly one slice row and interval
    duties = sorted((n, d.task, d.subtask, d.role, d.start, d.end) for n, s in out.items() for d in s.duties)
    rows = sorted((r.node, s.task, s.subtask, r.role, a, b) for s in slices for r in s.nodes for a, b in s.intervals)
    assert duties == rows


# -- configuration and dispatch ---------------------------------------------------------------------

def line_slice():
    nodes = tuple(SliceNode(n, (3000.0 * (2 - i), 0.0, -50.0), 0.0, role, 100.0, 0.0)
                  for i, (n, role) in enumerate([(1, "source"), (2, "relay"), (0, "sink")]))
    return SliceSchedule("t", "com", ((0.0, 600.0),), nodes)


def test_zero_budget_returns_seed_and_precedent_is_reused():
    ev = slice_evaluator(line_slice(), ChannelParams(range_m=5000), horizon_s=300.0)
    store = {}
    r0 = optimize_config("upload", Demand(), ev, 0, {"power_w": [5.0, 10.0]}, store)
    assert r0.scheme == DEFAULT_SCHEME and r0.seeded_from == "default"
    r1 = optimize_config("upload", Demand(), ev, 1, {"power_w": [5.0, 10.0]}, store)
    assert r1.seeded_from == "precedent"


def test_feasible_config_meets_demand_on_resimulation():
    ch = ChannelParams(range_m=5000)
    ev = slice_evaluator(line_slice(), ch, horizon_s=600.0)
    demand = com_demand(extract_demand(com_task(number=5, window=600.0)))
    res = optimize_config("upload", demand, ev, 2, {"power_w": [2.0, 5.0, 10.0], "sending_rate": [0.005, 0.01]})
    assert res.feasible
    assert demand.satisfied(slice_evaluator(line_slice(), ch, horizon_s=600.0)(res.scheme))


def three_node_net():
    specs = [NodeSpec(n, Position(3000.0 * (2 - n), 0, -50)) for n in (0, 1, 2)]
    return SlottedNetwork(specs, ChannelParams(range_m=5000), 6.0, 3, chain_offsets([0, 1, 2], 3),
                          RoutingTable({(0, 1): 1, (0, 2): 1, (1, 2): 2}), seed=0)


def test_each_node_gets_only_its_own_schedule():
    slices = [sl("t", "com", [(0, 50)], [(2, "source"), (1, "relay"), (0, "sink")])]
    schedules = combine(slices)
    config = {"t/com": DEFAULT_SCHEME}
    payloads = dispatch_payloads(schedules, config, slices)
    assert sorted(payloads) == [0, 1, 2]
    for n, blob in payloads.items():
        sched, cfg = decode_payload(blob)
        assert sched == schedules[n]
        assert sched.to_bytes() == schedules[n].to_bytes()
        assert set(cfg) == {"t/com"}
    res = dispatch(three_node_net(), 0, {n: s for n, s in schedules.items() if n != 0}, config, slices)
    assert set(res.delivered) == {1, 2}
    assert decode_payload(res.delivered[2])[0] == schedules[2]


def test_empty_dispatch_sends_nothing():
    net = three_node_net()
    res = dispatch(net, 0, {})
    assert res.delivered == {} and net.sent == []


# -- events and lifetime ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def lifetime():
    topo = cluster_topology(*SCENARIOS["b"], range_m=6000.0)
    events = default_events(topo, 600.0)
    return topo, events, simulate_lifetime(topo, events, 600.0, piggyback_bytes=16)


def test_lifetime_costs_stay_below_repeated_collection(lifetime):
    topo, events, res = lifetime
    assert len(events) >= 5
    gaps = [(r.gap_time_s, r.gap_energy_j) for r in res.rows]
    assert gaps[0] == (0.0, 0.0)
    for r in res.rows[1:]:
        assert r.tnsd_time_s < r.tgnso_time_s and r.tnsd_energy_j < r.tgnso_energy_j
    assert all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(gaps, gaps[1:]))


def test_each_event_gets_its_documented_response(lifetime):
    topo, events, res = lifetime
    for resp in res.responses:
        ev = resp.event
        assert resp.delay_s <= 600.0 + 0.1
        if ev.kind == "drift":
            assert resp.action == "adjust_power_slot" and resp.params["power_w"] > 0
        elif ev.kind == "exhaustion":
            assert resp.action == ("auv_substitute" if topo.children(ev.node) else "none")
        else:
            assert resp.action == "reschedule" and resp.params["parent"] is not None


def test_dead_relay_without_free_auv_leaves_orphans():
    topo = cluster_topology(*SCENARIOS["a"], range_m=6000.0)
    relay = next(n for n, x in topo.nodes.items() if x.kind == "sn" and topo.children(n))
    r = EventResponder(topo, ChannelParams(range_m=6000.0))
    r.busy_auvs = {n for n, x in topo.nodes.items() if x.kind == "auv"}
    resp = r.respond(NetworkEvent(10.0, "exhaustion", relay), 600.0, 0.1)
    assert resp.action == "none" and resp.params["orphans"]
    assert resp.decided_at == pytest.approx(600.1)
