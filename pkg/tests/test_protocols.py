import math

import pytest
from hypothesis import given, settings, strategies as st

from uwdt.experiments.power_control import PowerControlConfig, PowerControlRun
from uwdt.localdt.link import LinkTwin
from uwdt.protocols.pcmac import (FINE_GRID, Action, PcMacState, PcMode, HandshakeLost, min_power,
                                  pcmac_dt_step, pcmac_handshake, pcmac_r_step, round_up)
from uwdt.protocols.pmac import (SlotClock, SlotSchedule, chain_offsets, color_offsets, compute_slot_length,
                                 pmac_may_send)
from uwdt.protocols.routing import NoRoute, RoutingLoop, RoutingTable, next_hop, path
from uwdt.sim.channel import noise_w, received_intensity_w

# -- slots ------------------------------------------------------------------------------------------


def test_slot_lengths_for_the_two_packet_sizes():
    assert compute_slot_length(3.133, 2.0) == 6
    assert compute_slot_length(1.817, 2.0) == 4
    assert compute_slot_length(0, 0) == 0


def test_slot_length_exact_integer_not_rounded_up():
    assert compute_slot_length(2.0, 2.0) == 4
    with pytest.raises(ValueError):
        compute_slot_length(-1, 0)


def test_owner_of_slot_zero_may_send_at_t0():
    sched = SlotSchedule(6, 3, {1: 0, 2: 1, 3: 2})
    assert pmac_may_send(sched, 1, 0.0)
    assert not pmac_may_send(sched, 2, 0.0)


def test_slot_boundary_belongs_to_next_slot():
    sched = SlotSchedule(6, 3, {1: 0, 2: 1, 3: 2})
    assert pmac_may_send(sched, 2, 6.0)
    assert not pmac_may_send(sched, 1, 6.0)
    assert pmac_may_send(sched, 1, 5.999)


def test_chain_nodes_never_share_a_slot():
    sched = SlotSchedule(6, 3, chain_offsets([1, 2, 3], 3))
    for k in range(100):
        t = 6 * k + 3
        owners = [n for n in (1, 2, 3) if pmac_may_send(sched, n, t)]
        assert len(owners) == 1


def test_schedule_validation():
    with pytest.raises(ValueError):
        SlotSchedule(0, 3)
    with pytest.raises(ValueError):
        SlotSchedule(6, 3, {1: 3})
    with pytest.raises(KeyError):
        pmac_may_send(SlotSchedule(6, 3, {1: 0}), 9, 0.0)


@settings(max_examples=100)
@given(st.dictionaries(st.integers(0, 12), st.sets(st.integers(0, 12), max_size=5), min_size=1, max_size=12))
def test_colouring_separates_conflicting_nodes(raw):
    conflicts = {n: set() for n in raw}
    for n, ms in raw.items():
        for m in ms:
            if m != n:
                conflicts.setdefault(m, set()).add(n)
                conflicts[n].add(m)
    offsets, cycle = color_offsets(conflicts)
    for n, ms in conflicts.items():
        assert 0 <= offsets[n] < cycle
        assert all(offsets[n] != offsets[m] for m in ms)


def test_slot_clock_keeps_numbering_across_length_change():
    clk = SlotClock(6.0)
    assert clk.index(1499.0) == 249
    at = clk.change_length(1500.0, 4.0)
    assert at == 1500.0
    assert clk.index(1500.0) == 250 and clk.index(1504.0) == 251
    clk2 = SlotClock(6.0)
    assert clk2.change_length(1501.0, 4.0) == 1506.0


# -- routing ----------------------------------------------------------------------------------------

def test_chain_route():
    table = RoutingTable.chain([1, 2, 3])
    assert next_hop(table, 1, 3) == 2
    assert next_hop(table, 2, 3) == 3
    assert next_hop(table, 3, 3) == 3
    assert path(table, 1, 3) == [1, 2, 3]
    with pytest.raises(NoRoute):
        next_hop(table, 3, 1)


def test_loop_detected():
    table = RoutingTable({(1, 9): 2, (2, 9): 3, (3, 9): 1})
    with pytest.raises(RoutingLoop):
        path(table, 1, 9)
    with pytest.raises(RoutingLoop):
        table.validate()


@given(st.integers(2, 15), st.data())
def test_random_tree_paths_terminate(n, data):
    # parents always have a smaller id, so the table is acyclic by construction
    parent = {i: data.draw(st.integers(0, i - 1)) for i in range(1, n)}
    table = RoutingTable.tree(parent, 0)
    for i in range(1, n):
        p = path(table, i, 0)
        assert p[-1] == 0 and len(p) <= n


# -- power control ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def link():
    return PowerControlRun(PowerControlConfig(), "relink")


def noise_with(run, level):
    itf = received_intensity_w(level * run.ch.efficiency, run.d_i, run.ch)
    return noise_w(run.ch) + itf


@pytest.mark.parametrize("level,expected", [(0.5, 6.0), (1.0, 6.0), (2.0, 12.0), (4.0, 12.0), (6.0, 18.0),
                                            (8.0, 18.0)])
def test_handshake_power_per_interference_level(link, level, expected):
    state = PcMacState(PcMode.RELINK)
    rts = received_intensity_w(state.max_power_w * link.ch.efficiency, link.d_s, link.ch)
    assert pcmac_handshake(state, rts, noise_with(link, level), link.target_snr) == expected
    assert 0 < state.current_power_w <= state.max_power_w


def test_handshake_on_clean_link_picks_the_minimum_grid_power():
    state = PcMacState()
    assert pcmac_handshake(state, 1.0, 1e-12, 10.0) == 6.0


def test_handshake_lost():
    with pytest.raises(HandshakeLost):
        pcmac_handshake(PcMacState(), None, 1.0, 10.0)


def test_min_power_scales_linearly_with_snr_target():
    a = min_power(1e-6, 30.0, 1e-9, 10.0)
    b = min_power(1e-6, 30.0, 1e-9, 13.0103)
    assert b / a == pytest.approx(2.0, rel=1e-4)
    assert round_up(7.0, (6, 12, 18), 30) == 12
    assert round_up(40.0, (6, 12, 18), 30) == 30


def test_relink_step_thresholds():
    state = PcMacState(PcMode.RELINK)
    assert pcmac_r_step(state, 0.002) is Action.KEEP
    assert pcmac_r_step(state, 0.61) is Action.REHANDSHAKE
    with pytest.raises(ValueError):
        pcmac_r_step(PcMacState(PcMode.FIXED), 0.5)


def test_state_bounds():
    with pytest.raises(ValueError):
        PcMacState(current_power_w=40.0)
    s = PcMacState()
    for i in range(100):
        s.record(10.0, 6.0, i % 4 != 0)
    assert len(s.history) == 64
    assert s.observed_loss() == pytest.approx(0.25)


def twin_for(link, level):
    tw = LinkTwin(1, 3, link.net.position(1), link.net.position(3), link.ch, 200, 4.0, link.overhead,
                  target_loss=0.02, seed=1)
    tw.observe(1e-6, 10 * math.log10(1e-6 / noise_with(link, level)))
    return tw


def test_twin_selects_8w_at_2w_interference(link):
    state = PcMacState(PcMode.DT)
    chosen = pcmac_dt_step(state, twin_for(link, 2.0))
    hs = PcMacState(PcMode.RELINK)
    rts = received_intensity_w(30.0 * link.ch.efficiency, link.d_s, link.ch)
    assert chosen == 8.0 < pcmac_handshake(hs, rts, noise_with(link, 2.0), link.target_snr)


def test_twin_without_interference_matches_handshake_baseline(link):
    state = PcMacState(PcMode.DT)
    tw = LinkTwin(1, 3, link.net.position(1), link.net.position(3), link.ch, 200, 4.0, link.overhead, seed=1)
    chosen = pcmac_dt_step(state, tw)
    need = 3.4  # required power with no interferer
    assert chosen == round_up(need, FINE_GRID, 30.0)


def test_dt_step_rejects_other_modes(link):
    with pytest.raises(ValueError):
        pcmac_dt_step(PcMacState(PcMode.RELINK), twin_for(link, 1.0))
