"""Per-node twin: database upkeep, trace-driven replica, perception and diagnosis."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..globaldt.replica import Fact, Payload
from ..protocols.routing import NoRoute, next_hop
from ..sim.channel import ChannelParams, Position, ber, noise_w, packet_error_probability, received_intensity_w
from ..sim.medium import Outcome
from ..sim.packets import PacketKind
from ..sim.rng import aux_rng
from ..sim.trace import MetricLog
from .database import DataCategory, Datum, LocalDatabase
from .perception import Candidate, ExternalChange, InternalFailure, NoFit, Perceptor, Status, diagnose

STATE_FIELDS = ("location", "power_w", "packet_size", "sending_rate", "phase", "sink", "next_hop",
                "slot_length", "slot_cycle", "offset", "kind", "enabled")


@dataclass
class LocalDtConfig:
    period_s: float = 100.0
    window: int = 10
    hidden: int = 16
    rel_threshold: float = 0.10
    abs_threshold: float = 0.05
    epochs: int = 20
    lr: float = 0.05
    # candidate interferer source powers (electric W), 3 dB apart
    interference_grid: tuple[float, ...] = tuple(2.0 ** (k / 2) / 64 for k in range(25))
    fit_bound: float = 0.5
    piggyback_period_s: float = 100.0
    history_len: int = 8192


@dataclass
class ReplicaCounts:
    t0: float
    t1: float
    sent: int = 0
    sent_own: int = 0
    sent_relay: int = 0
    received: int = 0


class ReplayReplica:
    """The node's MAC re-enacted from what the node itself recorded.

    Inputs are the node's own packet generations and the inbound transmissions
    it heard; whether an inbound packet gets through is decided by the twin's
    channel model (recorded signal level against the twin's noise-plus-
    interference estimate), not by the real outcome.
    """

    def __init__(self, twin: "LocalTwin"):
        self.twin = twin
        self.queue: deque = deque()
        self.t = 0.0
        self.gen_i = 0
        self.rx_i = 0
        self.rng = aux_rng(twin.seed, 7, twin.owner)

    def _owned_slots(self, t0: float, t1: float) -> list[float]:
        db = self.twin.db
        cycle = db.config("slot_cycle")
        offset = db.config("offset")
        if cycle is None or offset is None:
            return []
        segments = sorted(db.config_timeline.get("slot_length", []), key=lambda r: r[0])
        out = []
        epoch, index = 0.0, 0
        for i, (eff, length) in enumerate(segments):
            if i > 0:
                prev_len = segments[i - 1][1]
                index += round((eff - epoch) / prev_len)
                epoch = eff
            end = segments[i + 1][0] if i + 1 < len(segments) else math.inf
            k0 = max(0, math.ceil((t0 - epoch) / length - 1e-9))
            k = k0
            while True:
                s = epoch + k * length
                if s >= min(t1, end) - 1e-9:
                    break
                if (index + k) % cycle == offset:
                    out.append(s)
                k += 1
        return out

    def advance(self, t1: float) -> ReplicaCounts:
        tw = self.twin
        c = ReplicaCounts(self.t, t1)
        events = []
        while self.gen_i < len(tw.gen_log) and tw.gen_log[self.gen_i][0] < t1:
            g = tw.gen_log[self.gen_i]
            events.append((g[0], 0, "gen", g))
            self.gen_i += 1
        while self.rx_i < len(tw.rx_log) and tw.rx_log[self.rx_i]["time"] < t1:
            r = tw.rx_log[self.rx_i]
            events.append((r["time"], 0, "rx", r))
            self.rx_i += 1
        for s in self._owned_slots(self.t, t1):
            events.append((s, 1, "slot", None))
        events.sort(key=lambda e: (e[0], e[1]))
        is_sink = tw.db.config("sink") == tw.owner
        for t, _, kind, data in events:
            if kind == "gen":
                self.queue.append((tw.owner, data[1]))
            elif kind == "rx":
                if self.rng.random() < tw.predicted_loss(data):
                    continue
                c.received += 1
                if not is_sink:
                    self.queue.append((data["origin"], data["size"]))
            elif self.queue and tw.db.config("enabled", True):
                origin, _ = self.queue.popleft()
                c.sent += 1
                if origin == tw.owner:
                    c.sent_own += 1
                else:
                    c.sent_relay += 1
        self.t = t1
        return c


class LocalTwin:
    """Listener that keeps one node's twin in step with what that node observes."""

    def __init__(self, owner: int, ch: ChannelParams, cfg: LocalDtConfig | None = None, seed: int = 0,
                 log: MetricLog | None = None, interferer_position: Position | None = None):
        self.owner = owner
        self.ch = ch
        self.cfg = cfg or LocalDtConfig()
        self.seed = seed
        self.log = log if log is not None else MetricLog()
        self.db = LocalDatabase(owner, history_len=self.cfg.history_len)
        self.gen_log: list[tuple[float, int]] = []
        self.rx_log: list[dict] = []
        self.tx_times: list[float] = []
        self.perceptor = Perceptor(["success_rate"], self.cfg.window, self.cfg.hidden, self.cfg.rel_threshold,
                                   self.cfg.abs_threshold, self.cfg.epochs, self.cfg.lr, seed=seed * 1000 + owner)
        self.replica = ReplayReplica(self)
        self.replica_counts: list[ReplicaCounts] = []
        self.diagnoses: list[tuple[float, Any]] = []
        self.statuses: list[tuple[float, Status]] = []
        self.known: dict[tuple, Fact] = {}
        self._unsent: list[Fact] = []
        self._last_full = -math.inf
        self.interferer_position = interferer_position
        if interferer_position is not None:
            self.db.ingest(Datum(owner, 0.0, DataCategory.SENSOR, "interferer_position",
                                 interferer_position.as_tuple()))

    # -- wiring ----------------------------------------------------------------------------------
    def attach(self, net) -> None:
        spec = net.spec(self.owner)
        t = net.engine.now
        sink = spec.sink if spec.sink is not None else self.owner
        try:
            hop = next_hop(net.routing, self.owner, sink)
        except NoRoute:
            hop = None
        state = {"location": spec.position.as_tuple(), "power_w": spec.power_w, "packet_size": spec.packet_size,
                 "sending_rate": spec.sending_rate if spec.sink is not None else 0.0, "phase": spec.phase,
                 "sink": sink, "next_hop": hop, "slot_length": net.clock.length, "slot_cycle": net.slot_cycle,
                 "offset": net.offsets.get(self.owner), "kind": spec.kind, "enabled": spec.enabled}
        for name, value in state.items():
            self._own_state(t, name, value)
        net.listeners.append(self)

    def schedule_ticks(self, net, until: float) -> None:
        P = self.cfg.period_s
        k = 1
        while k * P <= until + 1e-9:
            net.at(k * P, lambda n, t, k=k: self.tick(k, t), target=self.owner)
            k += 1

    def _own_state(self, t: float, name: str, value) -> None:
        self.db.ingest(Datum(self.owner, t, DataCategory.STATE, name, value))
        self._learn(Fact(self.owner, name, t, value))

    def _learn(self, f: Fact) -> None:
        key = (f.node, f.field, f.timestamp)
        if key not in self.known:
            self.known[key] = f
            self._unsent.append(f)

    # -- listener ---------------------------------------------------------------------------------
    def on_event(self, kind: str, node: int, t: float, data: dict) -> None:
        if node != self.owner:
            return
        if kind == "generate":
            pkt = data["packet"]
            self.gen_log.append((t, pkt.size_bytes))
            self.db.ingest(Datum(self.owner, t, DataCategory.LOG, "generated",
                                 {"packet": pkt.id, "size": pkt.size_bytes}))
        elif kind == "send":
            tx = data["tx"]
            self.tx_times.append(t)
            self.db.ingest(Datum(self.owner, t, DataCategory.COMMUNICATION, "tx",
                                 {"packet": tx.packet.id, "kind": tx.packet.kind.value, "power_w": tx.tx_power_w}))
        elif kind == "receive":
            tx, rec = data["tx"], data["reception"]
            pkt = tx.packet
            info = {"time": t, "packet": pkt.id, "kind": pkt.kind.value, "origin": pkt.origin, "size": pkt.size_bytes,
                    "snr_db": rec.snr_db, "signal_w": rec.signal_w, "ok": rec.ok, "intended": data["intended"],
                    "outcome": rec.outcome.value}
            self.db.ingest(Datum(self.owner, t, DataCategory.COMMUNICATION, "rx", info, subject=tx.sender))
            if data["intended"] and pkt.kind is PacketKind.DATA:
                self.rx_log.append(info)
            if rec.ok and pkt.piggyback:
                for item in pkt.piggyback:
                    if isinstance(item, Payload):
                        for f in item.facts:
                            self._learn(f)
                            self.db.ingest(Datum(item.origin, f.timestamp, DataCategory.STATE, f.field, f.value,
                                                 subject=f.node))
        elif kind == "config":
            eff = data.get("effective", t)
            self._own_state(eff, data["field"], data["value"])

    # -- channel model ---------------------------------------------------------------------------------
    def predicted_loss(self, rx: dict) -> float:
        """Loss probability the twin assigns to an inbound packet."""
        if rx["outcome"] == Outcome.COLLIDED.value:
            return 1.0
        est = self.db.interference_at(rx["time"])
        sig = rx["signal_w"]
        if sig <= 0:
            return 1.0
        snr = 10.0 * math.log10(sig / (noise_w(self.ch) + est))
        return packet_error_probability(ber(snr), 8 * rx["size"])

    # -- perception loop ---------------------------------------------------------------------------------
    def tick(self, k: int, t: float) -> None:
        P = self.cfg.period_s
        counts = self.replica.advance(t)
        self.replica_counts.append(counts)
        for name in ("sent", "sent_own", "sent_relay", "received"):
            self.log.add(t, self.owner, f"dt.{name}", getattr(counts, name))
        recent = [r for r in self.rx_log if t - P <= r["time"] < t]
        if not recent:
            return
        success = sum(1 for r in recent if r["ok"]) / len(recent)
        res = self.perceptor.observe(k, "success_rate", success)
        self.statuses.append((t, res.status))
        self.log.add(t, self.owner, "perception.degraded", 1 if res.status is Status.DEGRADED else 0)
        if res.status is Status.DEGRADED:
            # a drop the twin's channel model already accounts for needs no new diagnosis
            expected = sum(1.0 - self.predicted_loss(r) for r in recent) / len(recent)
            if abs(expected - success) > self.perceptor.threshold(expected):
                self._diagnose(t, recent, success)

    def _diagnose(self, t: float, recent: list[dict], success: float) -> None:
        snrs = [r["snr_db"] for r in recent if math.isfinite(r["snr_db"])]
        observed = [success, (sum(snrs) / len(snrs)) / 10.0 if snrs else 0.0]
        pos_t = self.db.config("location")
        itf_pos = self.db.env_info.get("interferer_position")
        here = Position(*pos_t)
        where = Position(*itf_pos.value) if itf_pos is not None else here.moved(100.0, 0.0)
        d = here.distance(where)
        candidates = [Candidate("interference", {"power_w": p, "received_w": received_intensity_w(
            p * self.ch.efficiency, d, self.ch)}) for p in (0.0,) + tuple(self.cfg.interference_grid)]

        def simulate(c: Candidate):
            extra = c.params["received_w"] if c.params["power_w"] > 0 else 0.0
            ok, snr = [], []
            for r in recent:
                s = 10.0 * math.log10(r["signal_w"] / (noise_w(self.ch) + extra)) if r["signal_w"] > 0 else -60.0
                snr.append(s)
                ok.append(1.0 - packet_error_probability(ber(s), 8 * r["size"]))
            return [sum(ok) / len(ok), (sum(snr) / len(snr)) / 10.0]

        try:
            result = diagnose(self.db, observed, candidates, simulate, self.cfg.fit_bound)
        except NoFit as e:
            self.diagnoses.append((t, e))
            self.log.add(t, self.owner, "diagnosis.nofit", 1)
            return
        self.diagnoses.append((t, result))
        if isinstance(result, ExternalChange) and result.kind == "interference":
            w = result.params["received_w"] if result.params["power_w"] > 0 else 0.0
            self.db.set_interference_estimate(t, w)
            self._learn(Fact(self.owner, "interference_w", t, w))
            self.log.add(t, self.owner, "diagnosis.interference_w", result.params["power_w"])
        elif isinstance(result, InternalFailure):
            self.log.add(t, self.owner, "diagnosis.internal", 1)

    # -- uploads ---------------------------------------------------------------------------------------------
    def piggyback(self, t: float) -> Payload | None:
        """DT data to ride on the packet being sent now: new facts, plus a full refresh once per period."""
        if t - self._last_full >= self.cfg.piggyback_period_s:
            self._last_full = t
            facts = tuple(self.known.values())
        elif self._unsent:
            facts = tuple(self._unsent)
        else:
            return None
        self._unsent = []
        return Payload(self.owner, t, facts + (Fact(self.owner, "heartbeat", t, t),))
