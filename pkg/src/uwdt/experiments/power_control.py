"""Transmit-power control under a stepped interference sweep.

Nodes 1 and 3 alternate 200 B packets in 4 s slots while an interferer on
their perpendicular bisector steps through a list of electric powers.  The
fixed, relink and twin-assisted power-control variants run on identical
seeds and channel realisations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.optimize import brentq

from ..localdt.allocation import AllocationScheme
from ..localdt.link import LinkTwin
from ..protocols.pcmac import (FINE_GRID, HANDSHAKE_GRID, Action, PcMacState, PcMode, min_power, pcmac_dt_step,
                               pcmac_handshake, pcmac_r_step, round_up)
from ..protocols.routing import RoutingTable
from ..sim.channel import (SL_PER_WATT_DB, ChannelParams, Position, attenuation_db, ber, calibrate_framing, noise_w,
                           received_intensity_w, snr_for_packet_error, transmission_delay)
from ..sim.medium import Interferer, Outcome
from ..sim.network import NodeSpec, SlottedNetwork
from ..sim.packets import PacketKind
from .base import Check, ExperimentOutput


@dataclass
class PowerControlConfig:
    levels: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 6.0, 8.0)
    level_duration_s: float = 800.0
    slot_length_s: float = 4.0
    packet_size: int = 200
    rts_bytes: int = 30
    max_power_w: float = 30.0
    target_loss: float = 0.02
    ber_threshold: float = 0.05
    loss_window: int = 40
    compute_delay_s: float = 0.1
    # required power grows as base + slope * interferer power (both electric watts)
    base_power_w: float = 3.4
    power_slope: float = 1.8
    link_distance_m: float = 1000.0
    framing: tuple[tuple[int, float], tuple[int, float]] = ((200, 1.817), (400, 3.133))
    seed: int = 1
    methods: tuple[str, ...] = ("fixed", "relink", "dt")


def link_geometry(ch: ChannelParams, distance_m: float, target_snr_db: float, base_w: float,
                  slope: float) -> tuple[float, float]:
    """Ambient noise level and interferer distance that make the power needed
    across ``distance_m`` equal ``base_w + slope * I`` for interferer power ``I``.

    Returns (ambient_noise_db, interferer distance to each node).
    """
    g = 10.0 ** (target_snr_db / 10.0)
    gain_s = received_intensity_w(1.0, distance_m, ch)
    # base_w = g * noise / (eff * gain_s)
    noise = base_w * ch.efficiency * gain_s / g
    noise_db = SL_PER_WATT_DB + 10.0 * math.log10(noise)
    gain_i = slope * gain_s / g
    d_i = brentq(lambda d: received_intensity_w(1.0, d, ch) - gain_i, 1.0, 1e6, xtol=1e-9)
    if d_i <= distance_m / 2:
        raise ValueError("interferer would have to sit between the nodes")
    return noise_db, d_i


@dataclass
class Adjustment:
    node: int
    level: float
    start: float
    duration: float
    energy_j: float
    power_w: float


@dataclass
class _NodeCtl:
    nid: int
    peer: int
    state: PcMacState
    twin: LinkTwin | None = None
    pending_rts: bool = False
    awaiting_cts: float | None = None
    reply_to: int | None = None
    reply_power: float | None = None
    new_power_at: float | None = None
    adj_start: float | None = None
    adj_energy: float = 0.0
    adj_power: float | None = None
    await_data_energy: bool = False
    last_adj: Adjustment | None = None
    window: list = field(default_factory=list)


class PowerControlRun:
    def __init__(self, cfg: PowerControlConfig, method: str):
        self.cfg = cfg
        self.method = PcMode(method)
        eff, ov = calibrate_framing(list(cfg.framing), ChannelParams())
        self.target_snr = snr_for_packet_error(cfg.target_loss, 8 * cfg.packet_size)
        d_s = cfg.link_distance_m
        noise_db, d_i = link_geometry(ChannelParams(coding_efficiency=eff), d_s, self.target_snr,
                                      cfg.base_power_w, cfg.power_slope)
        self.ch = ChannelParams(coding_efficiency=eff, ambient_noise_db=noise_db)
        self.overhead = ov
        self.d_s, self.d_i = d_s, d_i
        p1, p3 = Position(0, 0, -50), Position(d_s, 0, -50)
        self.itf_pos = Position(d_s / 2, math.sqrt(d_i ** 2 - (d_s / 2) ** 2), -50)
        L = cfg.slot_length_s
        T = cfg.level_duration_s
        self.interferers = [Interferer(self.itf_pos, p, i * T, (i + 1) * T) for i, p in enumerate(cfg.levels)]
        nodes = [NodeSpec(1, p1, power_w=cfg.max_power_w, packet_size=cfg.packet_size, sending_rate=1 / (2 * L),
                          phase=0.5, sink=3),
                 NodeSpec(3, p3, power_w=cfg.max_power_w, packet_size=cfg.packet_size, sending_rate=1 / (2 * L),
                          phase=0.5 + L, sink=1)]
        routing = RoutingTable({(1, 3): 3, (3, 1): 1})
        self.net = SlottedNetwork(nodes, self.ch, L, 2, {1: 0, 3: 1}, routing, seed=cfg.seed,
                                  interferers=self.interferers, overhead_s=ov,
                                  slot_hooks={1: self._slot_hook, 3: self._slot_hook})
        self.net.listeners.append(self)
        self.ctl: dict[int, _NodeCtl] = {}
        for nid, peer, pos, ppos in ((1, 3, p1, p3), (3, 1, p3, p1)):
            st = PcMacState(self.method, cfg.max_power_w, cfg.max_power_w, cfg.ber_threshold, cfg.rts_bytes)
            twin = None
            if self.method is PcMode.DT:
                twin = LinkTwin(nid, peer, pos, ppos, self.ch, cfg.packet_size, L, ov, cfg.target_loss,
                                seed=cfg.seed)
            self.ctl[nid] = _NodeCtl(nid, peer, st, twin)
        self.adjustments: list[Adjustment] = []
        self.data: list[tuple[float, int, bool, float, float, float]] = []  # t, receiver, ok, snr, per, ber

    # -- measurements a receiver can make ------------------------------------------------------
    def _noise_at(self, nid: int, t: float) -> float:
        return noise_w(self.ch) + self.net.medium.interference_at(self.net.position(nid), t)

    def level_at(self, t: float) -> float:
        i = min(int(t // self.cfg.level_duration_s), len(self.cfg.levels) - 1)
        return self.cfg.levels[i]

    def initial_handshake(self) -> None:
        """Size both directions once before traffic starts (not counted as an adjustment)."""
        for c in self.ctl.values():
            rx = received_intensity_w(c.state.max_power_w * self.ch.efficiency,
                                      self.net.position(c.nid).distance(self.net.position(c.peer)), self.ch)
            p = pcmac_handshake(c.state, rx, self._noise_at(c.peer, 0.0), self.target_snr, HANDSHAKE_GRID)
            self.net.spec(c.nid).power_w = p

    # -- MAC hook: control packets take the whole slot ------------------------------------------
    def _slot_hook(self, net: SlottedNetwork, nid: int, t: float) -> bool:
        c = self.ctl[nid]
        if c.reply_to is not None:
            pkt = net.packets.make(PacketKind.CTS, nid, c.reply_to, self.cfg.rts_bytes, t,
                                   payload={"power_w": c.reply_power})
            c.reply_to = None
            net.transmit(nid, pkt, t, power_w=c.state.max_power_w, hop=c.peer)
            return True
        if c.pending_rts:
            pkt = net.packets.make(PacketKind.RTS, nid, c.peer, self.cfg.rts_bytes, t)
            tx = net.transmit(nid, pkt, t, power_w=c.state.max_power_w, hop=c.peer)
            c.pending_rts = False
            c.awaiting_cts = t
            if c.adj_start is None:
                c.adj_start = t
                c.adj_energy = 0.0
            c.adj_energy += tx.energy_j
            return True
        if c.new_power_at is not None and t >= c.new_power_at - 1e-9:
            net.spec(nid).power_w = c.state.current_power_w
            self._finish_adjust(c, t)
        return False

    def _finish_adjust(self, c: _NodeCtl, t: float) -> None:
        c.new_power_at = None
        c.last_adj = Adjustment(c.nid, self.level_at(c.adj_start), c.adj_start, t - c.adj_start,
                                c.adj_energy, c.state.current_power_w)
        self.adjustments.append(c.last_adj)
        c.adj_start = None
        c.await_data_energy = True
        c.window.clear()

    # -- listener ------------------------------------------------------------------------------------
    def on_event(self, kind: str, node: int, t: float, data: dict) -> None:
        if kind == "send":
            tx = data["tx"]
            c = self.ctl[node]
            if tx.packet.kind is PacketKind.DATA and c.await_data_energy:
                # the first data packet at the adjusted power completes the adjustment cost
                c.last_adj.energy_j += tx.energy_j
                c.await_data_energy = False
            return
        if kind != "receive" or not data["intended"]:
            return
        tx, rec = data["tx"], data["reception"]
        c = self.ctl[node]
        pk = tx.packet.kind
        if pk is PacketKind.RTS:
            if rec.ok:
                probe = PcMacState(PcMode.RELINK, self.cfg.max_power_w, self.cfg.max_power_w)
                c.reply_to = tx.sender
                c.reply_power = pcmac_handshake(probe, rec.signal_w, self._noise_at(node, t), self.target_snr,
                                                HANDSHAKE_GRID)
            return
        if pk is PacketKind.CTS:
            requester = self.ctl[tx.packet.dst]
            if rec.ok and requester.awaiting_cts is not None:
                requester.state.current_power_w = tx.packet.payload["power_w"]
                requester.awaiting_cts = None
                requester.new_power_at = t
            return
        if pk is not PacketKind.DATA:
            return
        per = self.net.medium.loss_probability(tx, node)
        self.data.append((t, node, rec.ok, rec.snr_db, per, rec.ber))
        # the sender learns the outcome from link-layer feedback
        sender = self.ctl[tx.sender]
        sender.state.record(rec.snr_db, tx.tx_power_w, rec.ok)
        sender.window.append(rec.ok)
        if self.method is PcMode.RELINK:
            self._relink_check(sender)
        elif self.method is PcMode.DT:
            # the twin reads the interference off what this node hears and assumes it is
            # the same at the peer
            c.twin.observe(rec.signal_w, rec.snr_db)
            self._dt_check(c, t)

    def _relink_check(self, c: _NodeCtl) -> None:
        w = self.cfg.loss_window
        if c.adj_start is not None or c.pending_rts or c.awaiting_cts is not None or len(c.window) < w:
            return
        observed = 1 - sum(c.window[-w:]) / w
        if pcmac_r_step(c.state, observed) is Action.REHANDSHAKE:
            c.pending_rts = True

    def _dt_check(self, c: _NodeCtl, t: float) -> None:
        if c.adj_start is not None:
            return
        # predicted loss of our own link at the current power under the latest estimate
        res = c.twin.evaluate(_scheme(c.state.current_power_w, self.cfg), interference_w=c.twin.latest_noise_w())
        if res.loss <= self.cfg.target_loss:
            return
        c.adj_start = t
        c.adj_energy = 0.0
        done = t + self.cfg.compute_delay_s

        def apply(net, now, c=c):
            pcmac_dt_step(c.state, c.twin, FINE_GRID)
            net.spec(c.nid).power_w = c.state.current_power_w
            self._finish_adjust(c, now)
        self.net.at(done, apply, target=c.nid)

    # -- run ----------------------------------------------------------------------------------------
    def run(self) -> None:
        self.initial_handshake()
        self.net.run(self.cfg.level_duration_s * len(self.cfg.levels))


def _scheme(power: float, cfg: PowerControlConfig) -> AllocationScheme:
    return AllocationScheme(power_w=power, slot_length_s=cfg.slot_length_s, packet_size_bytes=cfg.packet_size)


def summarize(run: PowerControlRun) -> list[dict]:
    cfg = run.cfg
    T = cfg.level_duration_s
    rows = []
    for i, level in enumerate(cfg.levels):
        settled = [d for d in run.data if i * T + T / 2 <= d[0] < (i + 1) * T]
        n = len(settled)
        powers = [s.power_w for s in run.net.sent if s.node == 1 and s.time < (i + 1) * T]
        adj = [a for a in run.adjustments if a.level == level]
        rows.append({
            "method": run.method.value,
            "i_power_w": level,
            "t_power_w": powers[-1] if powers else math.nan,
            "ber": sum(1 for d in settled if not d[2]) / n if n else math.nan,
            "expected_per": sum(d[4] for d in settled) / n if n else math.nan,
            "bit_ber": sum(d[5] for d in settled) / n if n else math.nan,
            "adjustments": len(adj),
            "adjust_time_s": sum(a.duration for a in adj) / len(adj) if adj else math.nan,
            "adjust_energy_j": sum(a.energy_j for a in adj) / len(adj) if adj else math.nan,
        })
    return rows


def table_checks(rows: list[dict], threshold: float) -> list[Check]:
    by = {(r["method"], r["i_power_w"]): r for r in rows}
    levels = sorted({r["i_power_w"] for r in rows})
    methods = {r["method"] for r in rows}
    checks = []
    if "fixed" in methods:
        bers = [by["fixed", lv]["ber"] for lv in levels]
        checks.append(Check("fixed_ber_nondecreasing", all(b2 >= b1 for b1, b2 in zip(bers, bers[1:])),
                            f"fixed ber by level {bers}"))
    for m in ("relink", "dt"):
        if m in methods:
            worst = max(by[m, lv]["ber"] for lv in levels)
            checks.append(Check(f"{m}_ber_within_threshold", worst <= threshold, f"max ber {worst:.4f}"))
    if {"relink", "dt"} <= methods:
        both = [lv for lv in levels if by["relink", lv]["adjustments"] and by["dt", lv]["adjustments"]]
        checks.append(Check("dt_adjusts_faster", bool(both) and all(
            by["dt", lv]["adjust_time_s"] < by["relink", lv]["adjust_time_s"] for lv in both),
            f"levels where both adjust: {both}"))
        checks.append(Check("dt_adjusts_cheaper", bool(both) and all(
            by["dt", lv]["adjust_energy_j"] < by["relink", lv]["adjust_energy_j"] for lv in both),
            "; ".join(f"{lv}: {by['dt', lv]['adjust_energy_j']:.2f} vs {by['relink', lv]['adjust_energy_j']:.2f}"
                      for lv in both)))
        checks.append(Check("dt_power_not_above_relink", all(
            by["dt", lv]["t_power_w"] <= by["relink", lv]["t_power_w"] for lv in levels),
            str([(by["dt", lv]["t_power_w"], by["relink", lv]["t_power_w"]) for lv in levels])))
    return checks


def run_power_control(cfg: PowerControlConfig) -> ExperimentOutput:
    out = ExperimentOutput("power_control")
    rows = []
    for m in cfg.methods:
        run = PowerControlRun(cfg, m)
        run.run()
        rows.extend(summarize(run))
        for t, node, ok, snr, per, _ in run.data:
            out.log.add(t, node, f"{m}.lost", 0 if ok else 1)
        for s in run.net.sent:
            out.log.add(s.time, s.node, f"{m}.tx_power_w", s.power_w)
        out.summary[f"{m}.energy_j"] = run.net.ledger.total()
        out.summary[f"{m}.adjustments"] = len(run.adjustments)
    out.log.rows.sort(key=lambda r: (r[0], r[1], r[2]))
    out.tables["table_iii"] = rows
    out.checks = table_checks(rows, cfg.ber_threshold)
    for r in rows:
        out.figures.setdefault("power_vs_interference", []).append((r["method"], r["i_power_w"], r["t_power_w"]))
        out.figures.setdefault("ber_vs_interference", []).append((r["method"], r["i_power_w"], r["ber"]))
    return out
