import math

import numpy as np
import pytest

from uwdt.experiments.fidelity import FidelityConfig, Mutation, run_fidelity
from uwdt.localdt.allocation import (AllocationScheme, Demand, DeviceLimits, EvaluationResult, IllegalScheme,
                                     StaleReplica, deploy, evaluate_scheme, exhaustive_search, optimize_scheme,
                                     propose_scheme)
from uwdt.localdt.database import DataCategory, Datum, LocalDatabase
from uwdt.localdt.lstm import (InsufficientHistory, LstmModel, lstm_forward, lstm_loss_and_grads, lstm_train,
                               make_windows)
from uwdt.localdt.perception import (Candidate, ExternalChange, InternalFailure, MetricSeries, NoFit, Perceptor,
                                     Status, detect_degradation, diagnose)
from uwdt.protocols.routing import RoutingTable
from uwdt.sim.channel import ChannelParams, Position
from uwdt.sim.network import NodeSpec, SlottedNetwork

from .helpers import grad_check

# -- database ---------------------------------------------------------------------------------------


def test_own_power_change_updates_configuration():
    db = LocalDatabase(1)
    assert db.ingest(Datum(1, 5.0, DataCategory.STATE, "power_w", 8.0))
    assert db.config("power_w") == 8.0
    assert db.config_at("power_w", 4.0) is None
    assert db.config_at("power_w", 5.0) == 8.0


def test_overheard_neighbour_rts_adds_link_sample():
    db = LocalDatabase(1)
    db.ingest(Datum(1, 3.0, DataCategory.COMMUNICATION, "rts", {"snr_db": 12.5, "ok": True}, subject=2))
    assert db.link_samples(2) == [{"snr_db": 12.5, "ok": True}]
    assert db.channel_quality(2)["snr_db"] == 12.5


def test_duplicate_datum_is_ignored():
    db = LocalDatabase(1)
    d = Datum(2, 1.0, DataCategory.COMMUNICATION, "rx", {"snr_db": 10.0, "ok": False})
    assert db.ingest(d)
    assert not db.ingest(d)
    assert len(db.neighbor_info[2]["link"]) == 1


def test_malformed_datum_rejected():
    db = LocalDatabase(1)
    assert not db.ingest(Datum(1, math.nan, DataCategory.STATE, "x", 1))
    assert not db.ingest(Datum(1, 1.0, "bogus", "x", 1))
    assert db.rejected == 2


def test_histories_are_bounded():
    db = LocalDatabase(1, history_len=8)
    for k in range(50):
        db.ingest(Datum(2, float(k), DataCategory.COMMUNICATION, "rx", {"snr_db": float(k), "ok": True}))
    assert len(db.link_samples(2)) == 8
    assert db.link_samples(2)[0]["snr_db"] == 42.0


def test_stale_config_does_not_override_newer():
    db = LocalDatabase(1)
    db.ingest(Datum(1, 10.0, DataCategory.STATE, "power_w", 12.0))
    db.ingest(Datum(1, 5.0, DataCategory.STATE, "power_w", 6.0))
    assert db.config("power_w") == 12.0
    assert db.config_at("power_w", 7.0) == 6.0


# -- lstm -------------------------------------------------------------------------------------------

def test_zero_weights_predict_readout_bias():
    m = LstmModel.zeros(4)
    m.params["by"][0] = 0.37
    assert lstm_forward(m, [1.0, -2.0, 3.0]) == pytest.approx(0.37)


def test_forward_is_deterministic_and_batched():
    m = LstmModel.init(6, rng=np.random.default_rng(2))
    w = np.linspace(0, 1, 5)
    single = lstm_forward(m, w)
    assert single == lstm_forward(m, w)
    batch = lstm_forward(m, np.stack([w, w[::-1]]))
    assert batch[0] == pytest.approx(single)


def test_empty_window_rejected():
    with pytest.raises(InsufficientHistory):
        lstm_forward(LstmModel.init(4), [])
    with pytest.raises(InsufficientHistory):
        make_windows([1.0, 2.0], 2)


def test_lstm_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    m = LstmModel.init(5, rng=rng)
    for v in m.params.values():
        v += rng.normal(0, 0.3, v.shape)
    x, y = rng.normal(size=(7, 6)), rng.normal(size=7)
    _, grads = lstm_loss_and_grads(m, x, y)
    assert grad_check(lambda: lstm_loss_and_grads(m, x, y)[0], m.params, grads, rng) < 1e-4


def test_lr_zero_leaves_parameters_unchanged():
    m = LstmModel.init(4)
    before = m.copy()
    lstm_train(m, np.sin(np.arange(30)), 5, 3, 0.0)
    for k in m.params:
        assert np.array_equal(m.params[k], before.params[k])


def test_constant_series_is_learned():
    m = LstmModel.init(8, rng=np.random.default_rng(0))
    losses = lstm_train(m, np.full(40, 0.6), 5, 400, 0.1)
    assert losses[-1] < 1e-6
    assert abs(lstm_forward(m, np.full(5, 0.6)) - 0.6) < 1e-3


def test_sine_beats_persistence():
    s = 0.5 + 0.4 * np.sin(np.arange(120) * 2 * np.pi / 12)
    m = LstmModel.init(12, rng=np.random.default_rng(1))
    lstm_train(m, s[:100], 6, 600, 0.1)
    w, y = make_windows(s[90:], 6)
    err = np.mean(np.abs(lstm_forward(m, w) - y))
    persistence = np.mean(np.abs(w[:, -1] - y))
    assert err < persistence


# -- perception -------------------------------------------------------------------------------------

def test_detect_degradation_definition():
    assert detect_degradation(10.0, 10.0, 1.0) is Status.NORMAL
    assert detect_degradation(70.0, 100.0, 10.0) is Status.DEGRADED
    assert detect_degradation(95.0, 100.0, 10.0) is Status.NORMAL
    # cost metrics degrade upward
    assert detect_degradation(130.0, 100.0, 10.0, "cost") is Status.DEGRADED
    with pytest.raises(ValueError):
        detect_degradation(math.nan, 1.0, 0.1)


def test_metric_series_indices_strictly_increase():
    s = MetricSeries("throughput", 3)
    s.append(1, 1.0)
    with pytest.raises(ValueError):
        s.append(1, 2.0)
    with pytest.raises(InsufficientHistory):
        s.tail()


def test_perceptor_flags_a_sudden_drop():
    p = Perceptor(["success_rate"], window=5, epochs=40, seed=0)
    statuses = [p.observe(k, "success_rate", 0.95).status for k in range(1, 16)]
    assert all(s is Status.NORMAL for s in statuses)
    assert p.observe(16, "success_rate", 0.5).status is Status.DEGRADED


def test_depleted_battery_is_internal():
    db = LocalDatabase(1)
    db.ingest(Datum(1, 0.0, DataCategory.STATE, "residual_energy_j", 0.0))
    out = diagnose(db, [0.0], [Candidate("interference", {})], lambda c: [0.0])
    assert isinstance(out, InternalFailure)


def test_diagnose_picks_closest_candidate_and_reports_no_fit():
    db = LocalDatabase(1)
    cands = [Candidate("interference", {"power_w": p}) for p in (0.5, 1.0, 2.0, 4.0)]
    sim = lambda c: [1.0 / (1.0 + c.params["power_w"])]
    out = diagnose(db, [1 / 3], cands, sim)
    assert isinstance(out, ExternalChange) and out.params["power_w"] == 2.0
    with pytest.raises(NoFit):
        diagnose(db, [10.0], cands, sim, bound=0.1)


def test_injected_interference_is_fitted_within_one_grid_step():
    cfg = FidelityConfig(duration_s=1500,
                         mutations=(Mutation(1300.0, "interference", 2.0, position=(6200.0, 0.0, -50.0)),))
    _, run = run_fidelity(cfg)
    fitted = [d.params["power_w"] for tw in run.twins.values() for _, d in tw.diagnoses
              if isinstance(d, ExternalChange)]
    assert fitted
    step = 2 ** 0.5
    assert all(2.0 / step - 1e-9 <= p <= 2.0 * step + 1e-9 for p in fitted)


# -- allocation -------------------------------------------------------------------------------------

POWER_GRID = [0.5, 1, 2, 4, 6, 8, 10, 12, 16, 20, 24, 30]


def loss_model(need):
    # loss falls off once power passes the requirement
    def evaluate(s):
        return EvaluationResult(loss=0.0 if s.power_w >= need else 0.5, energy_j=s.power_w)
    return evaluate


def test_normal_state_returns_current_scheme():
    s = AllocationScheme()
    assert propose_scheme(s, Demand()) is s


def test_interference_diagnosis_raises_power():
    s = AllocationScheme(power_w=6.0)
    out = propose_scheme(s, Demand(), ExternalChange("interference", {}, 0.0), {"power_w": POWER_GRID})
    assert out.power_w > s.power_w


def test_congestion_shortens_slot_or_rate():
    s = AllocationScheme(slot_length_s=6.0, sending_rate=0.08, tunable=frozenset({"slot_length_s"}))
    out = propose_scheme(s, Demand(), ExternalChange("congestion", {}, 0.0))
    assert out.slot_length_s < 6.0
    s2 = AllocationScheme(slot_length_s=6.0, sending_rate=0.08, tunable=frozenset({"sending_rate"}))
    assert propose_scheme(s2, Demand(), ExternalChange("congestion", {}, 0.0)).sending_rate < 0.08


def test_higher_power_never_raises_evaluated_loss():
    from uwdt.experiments.power_control import PowerControlConfig, PowerControlRun
    from uwdt.localdt.link import LinkTwin
    from uwdt.sim.channel import noise_w, received_intensity_w
    run = PowerControlRun(PowerControlConfig(), "dt")
    tw = LinkTwin(1, 3, run.net.position(1), run.net.position(3), run.ch, 200, 4.0, run.overhead, seed=1)
    itf = noise_w(run.ch) + received_intensity_w(4.0 * run.ch.efficiency, run.d_i, run.ch)
    losses = [tw.evaluate(AllocationScheme(power_w=p, packet_size_bytes=200), interference_w=itf).loss
              for p in (4, 8, 12, 16, 20)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_zero_traffic_replica_has_zero_throughput():
    def factory(scheme):
        spec = [NodeSpec(1, Position(0, 0, -50), sending_rate=0.0, sink=2), NodeSpec(2, Position(1000, 0, -50))]

        def run(h):
            net = SlottedNetwork(spec, ChannelParams(), 6, 2, {1: 0, 2: 1}, RoutingTable.chain([1, 2]))
            net.run(h)
            return EvaluationResult(throughput_bps=net.counts(0, h)[2]["received_bits"] / h)
        return run

    assert evaluate_scheme(AllocationScheme(), factory, 600.0).throughput_bps == 0.0


def test_stale_snapshot_rejected():
    with pytest.raises(StaleReplica):
        evaluate_scheme(AllocationScheme(), lambda s: lambda h: EvaluationResult(), 100.0, snapshot_time=0.0,
                        now=500.0, max_age_s=60.0)


def test_optimal_seed_is_a_fixed_point():
    seed = AllocationScheme(power_w=8.0)
    res = optimize_scheme(seed, Demand(max_loss=0.02), 3, loss_model(8.0), {"power_w": POWER_GRID})
    assert res.scheme == seed and res.feasible


def test_search_finds_cheapest_feasible_power():
    seed = AllocationScheme(power_w=30.0)
    res = optimize_scheme(seed, Demand(max_loss=0.02), 3, loss_model(7.0), {"power_w": POWER_GRID})
    assert res.scheme.power_w == 8.0
    assert optimize_scheme(seed, Demand(), 0, loss_model(7.0), {"power_w": POWER_GRID}).scheme == seed


def test_coordinate_search_agrees_with_exhaustive_on_separable_grid():
    grids = {"power_w": POWER_GRID, "slot_length_s": [3.0, 4.0, 5.0, 6.0]}

    def evaluate(s):
        lat = 3 * s.slot_length_s
        return EvaluationResult(latency_s=lat, loss=0.0 if s.power_w >= 5 else 0.3,
                                energy_j=s.power_w * 10 + s.slot_length_s)

    seed = AllocationScheme(power_w=30.0, slot_length_s=6.0, tunable=frozenset(grids))
    d = Demand(max_latency_s=15.0, max_loss=0.01)
    a = optimize_scheme(seed, d, 5, evaluate, grids)
    b = exhaustive_search(seed, d, evaluate, grids)
    assert a.scheme == b.scheme


def test_scheme_needs_a_tunable_field():
    with pytest.raises(IllegalScheme):
        AllocationScheme(tunable=frozenset())


def chain_net():
    specs = [NodeSpec(1, Position(0, 0, -50), sending_rate=0.05, sink=2), NodeSpec(2, Position(1000, 0, -50))]
    return SlottedNetwork(specs, ChannelParams(), 6, 2, {1: 0, 2: 1}, RoutingTable.chain([1, 2]))


def test_deploy_applies_at_next_slot():
    net = chain_net()
    net.run(10.0)
    d = deploy(net, 1, AllocationScheme(power_w=8.0))
    assert d.effective_at == 12.0 and d.changed == ("power_w",)
    net.run(11.9)
    assert net.spec(1).power_w == 10.0
    net.run(30.0)
    assert net.spec(1).power_w == 8.0
    assert all(s.power_w == 8.0 for s in net.sent if s.node == 1 and s.time >= 12.0)


def test_identical_scheme_is_logged_noop():
    net, log = chain_net(), []
    d = deploy(net, 1, AllocationScheme(power_w=10.0), log=log)
    assert d.changed == () and log == [d]


def test_over_limit_power_rejected():
    net = chain_net()
    with pytest.raises(IllegalScheme):
        deploy(net, 1, AllocationScheme(power_w=40.0), DeviceLimits(max_power_w=30.0))
    net.run(20.0)
    assert net.spec(1).power_w == 10.0
