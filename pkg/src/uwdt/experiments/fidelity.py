"""Twin fidelity on a three-node chain under a schedule of configuration changes.

Nodes 1 and 2 send periodic traffic to sink 3 over the static route
1 -> 2 -> 3 with the pipelined slot MAC.  Every node runs a local twin and
node 3 also hosts the global twin.  Changes: sending rate at 500 s, packet
size at 1000 s, slot length at 1500 s, an interferer near node 3 at 2000 s.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

from ..globaldt.simulate import GlobalTwin
from ..localdt.twin import LocalDtConfig, LocalTwin
from ..protocols.pmac import chain_offsets
from ..protocols.routing import RoutingTable
from ..sim.channel import ChannelParams, Position, calibrate_framing
from ..sim.medium import Interferer
from ..sim.network import NodeSpec, SlottedNetwork
from .base import Check, ExperimentOutput


@dataclass
class Mutation:
    time: float
    kind: str  # sending_rate | packet_size | slot_length | interference
    value: float
    nodes: tuple[int, ...] = ()
    position: tuple[float, float, float] | None = None


@dataclass
class FidelityConfig:
    spacing_m: float = 3000.0
    depth_m: float = 50.0
    range_m: float = 5000.0
    power_w: float = 10.0
    ambient_noise_db: float = 80.0
    packet_size: int = 400
    sending_rate: float = 0.03
    phases: tuple[float, float] = (3.37, 11.71)
    slot_length_s: float = 6.0
    slot_cycle: int = 3
    duration_s: float = 2500.0
    interval_s: float = 100.0
    warmup_intervals: int = 2
    count_tolerance: float = 0.05
    throughput_tolerance: float = 0.10
    framing: tuple[tuple[int, float], tuple[int, float]] = ((200, 1.817), (400, 3.133))
    mutations: tuple[Mutation, ...] = (
        Mutation(500.0, "sending_rate", 0.08, (1, 2)),
        Mutation(1000.0, "packet_size", 200, (1, 2)),
        Mutation(1500.0, "slot_length", 4.0),
        Mutation(2000.0, "interference", 0.5, position=(6200.0, 0.0, -50.0)),
    )
    local_dt: LocalDtConfig = field(default_factory=LocalDtConfig)
    seed: int = 1


def _apply(m: Mutation):
    def fn(net: SlottedNetwork, t: float):
        if m.kind == "sending_rate":
            for n in m.nodes:
                net.set_rate(n, m.value)
        elif m.kind == "packet_size":
            for n in m.nodes:
                net.set_packet_size(n, int(m.value))
        elif m.kind == "slot_length":
            net.set_slot_length(m.value)
        elif m.kind == "power":
            for n in m.nodes:
                net.set_power(n, m.value)
        else:
            raise ValueError(f"unknown mutation kind {m.kind!r}")
    return fn


@dataclass
class FidelityRun:
    cfg: FidelityConfig
    net: SlottedNetwork
    twins: dict[int, LocalTwin]
    global_twin: GlobalTwin
    predictions: list[float]
    elapsed_s: float


def build(cfg: FidelityConfig, out: ExperimentOutput) -> tuple[SlottedNetwork, dict[int, LocalTwin], GlobalTwin]:
    eff, ov = calibrate_framing(list(cfg.framing), ChannelParams())
    ch = ChannelParams(coding_efficiency=eff, range_m=cfg.range_m, ambient_noise_db=cfg.ambient_noise_db)
    z = -cfg.depth_m
    chain = [1, 2, 3]
    nodes = [NodeSpec(1, Position(0, 0, z), power_w=cfg.power_w, packet_size=cfg.packet_size,
                      sending_rate=cfg.sending_rate, phase=cfg.phases[0], sink=3),
             NodeSpec(2, Position(cfg.spacing_m, 0, z), power_w=cfg.power_w, packet_size=cfg.packet_size,
                      sending_rate=cfg.sending_rate, phase=cfg.phases[1], sink=3),
             NodeSpec(3, Position(2 * cfg.spacing_m, 0, z), power_w=cfg.power_w, packet_size=cfg.packet_size)]
    interferers, itf_pos = [], None
    for m in cfg.mutations:
        if m.kind == "interference":
            itf_pos = Position(*m.position)
            interferers.append(Interferer(itf_pos, m.value, m.time))
    net = SlottedNetwork(nodes, ch, cfg.slot_length_s, cfg.slot_cycle, chain_offsets(chain, cfg.slot_cycle),
                         RoutingTable.chain(chain), seed=cfg.seed, interferers=interferers, overhead_s=ov)
    # the interference source's mooring is known; whether and how loud it transmits is not
    twins = {n: LocalTwin(n, ch, cfg.local_dt, cfg.seed, out.log, interferer_position=itf_pos) for n in chain}
    for tw in twins.values():
        tw.attach(net)
        tw.schedule_ticks(net, cfg.duration_s)
    net.piggyback_fn = lambda nid, t: twins[nid].piggyback(t)
    gt = GlobalTwin(3, twins[3], ch, ov, cfg.seed)
    net.listeners.append(gt)
    for m in cfg.mutations:
        if m.kind != "interference":
            net.at(m.time, _apply(m))
    return net, twins, gt


def run_fidelity(cfg: FidelityConfig) -> tuple[ExperimentOutput, FidelityRun]:
    out = ExperimentOutput("fidelity")
    started = time.perf_counter()
    net, twins, gt = build(cfg, out)
    I = cfg.interval_s
    n_int = int(round(cfg.duration_s / I))
    predictions: list[float] = []

    def global_tick(n, t, k):
        pred = gt.predict(t, I)
        predictions.append(pred.throughput_bps[k - 1])

    for k in range(1, n_int + 1):
        net.at(k * I, lambda n, t, k=k: global_tick(n, t, k), target=3)
    net.run(cfg.duration_s + 1e-6)
    elapsed = time.perf_counter() - started

    # per-interval comparison tables
    excluded = set(range(cfg.warmup_intervals))
    for m in cfg.mutations:
        k0 = int(m.time // I)
        excluded |= set(range(k0, k0 + cfg.warmup_intervals))
    rows, count_failures = [], []
    for k in range(n_int):
        t0, t1 = k * I, (k + 1) * I
        real = net.counts(t0, t1)
        for nid, tw in twins.items():
            dt = tw.replica_counts[k]
            for name in ("sent", "sent_own", "sent_relay", "received"):
                r, d = real[nid][name], getattr(dt, name)
                rows.append({"interval_start": t0, "node": nid, "metric": name, "real": r, "dt": d,
                             "scored": k not in excluded})
                out.log.add(t1, nid, f"real.{name}", r)
                if k not in excluded and abs(d - r) > cfg.count_tolerance * r + 1e-9:
                    count_failures.append((t0, nid, name, r, d))
    out.tables["local_counts"] = rows

    thr_rows, lagging = [], []
    onset = min((m.time for m in cfg.mutations if m.kind == "interference"), default=math.inf)
    for k in range(n_int):
        t0, t1 = k * I, (k + 1) * I
        real = net.counts(t0, t1)[3]["received_bits"] / I
        pred = predictions[k]
        ok = abs(pred - real) <= cfg.throughput_tolerance * real + 1e-9
        thr_rows.append({"interval_start": t0, "real_bps": real, "dt_bps": pred, "within": ok})
        out.log.add(t1, 3, "real.throughput_bps", real)
        out.log.add(t1, 3, "dt.throughput_bps", pred)
        if not ok:
            lagging.append(t0)
        out.figures.setdefault("throughput_vs_time", []).extend([("real", t0, real), ("dt", t0, pred)])
    out.tables["global_throughput"] = thr_rows
    for row in rows:
        out.figures.setdefault("packets_vs_time", []).append(
            (f"node{row['node']}.{row['metric']}.real", row["interval_start"], row["real"]))
        out.figures["packets_vs_time"].append(
            (f"node{row['node']}.{row['metric']}.dt", row["interval_start"], row["dt"]))

    after_onset = [t for t in lagging if t >= onset]
    before_onset = [t for t in lagging if t < onset]
    out.checks.append(Check("local_counts_within_tolerance", not count_failures,
                            f"{len(count_failures)} mismatches" + (f", first {count_failures[0]}"
                                                                   if count_failures else "")))
    out.checks.append(Check("global_throughput_tracking",
                            not before_onset and len(after_onset) <= 1 and all(t == onset for t in after_onset),
                            f"buckets outside tolerance: {lagging}"))
    degraded = [(t, n) for n, tw in twins.items() for t, s in tw.statuses if s.value == "Degraded"]
    detected = [t for t, n in degraded if onset <= t <= onset + 3 * cfg.local_dt.period_s]
    out.checks.append(Check("interference_detected", bool(detected) if math.isfinite(onset) else True,
                            f"degraded at {degraded}"))
    out.summary.update({
        "elapsed_s": elapsed, "count_mismatches": len(count_failures), "lagging_buckets": len(lagging),
        "uploads": gt.uploads, "energy_j": net.ledger.total(),
    })
    out.log.rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return out, FidelityRun(cfg, net, twins, gt, predictions, elapsed)
