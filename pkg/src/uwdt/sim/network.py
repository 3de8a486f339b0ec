"""Slotted multi-hop network built on the event engine.

Nodes queue DATA packets (own and relayed) FIFO and send the head of the
queue in every slot they own.  Used for ground truth and, with estimated
parameters, for the twins' nested simulations.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

from ..protocols.pmac import SlotClock
from ..protocols.routing import RoutingTable, next_hop
from .channel import ChannelParams, Position, transmission_delay
from .energy import EnergyLedger
from .engine import Engine, EventKind
from .medium import Interferer, Medium, Outcome, Reception
from .packets import Packet, PacketFactory, PacketKind, Transmission
from .rng import channel_rng, node_rng


@dataclass
class NodeSpec:
    id: int
    position: Position
    kind: str = "sensor"
    power_w: float = 10.0
    packet_size: int = 400
    sending_rate: float = 0.0
    traffic: str = "periodic"
    phase: float = 0.0
    sink: int | None = None
    energy_j: float = math.inf
    enabled: bool = True


@dataclass(frozen=True)
class SentRecord:
    time: float
    node: int
    packet_id: int
    origin: int
    size: int
    power_w: float
    duration: float
    created_at: float


@dataclass(frozen=True)
class RxRecord:
    time: float
    node: int
    sender: int
    packet_id: int
    origin: int
    size: int
    outcome: Outcome
    snr_db: float
    intended: bool
    created_at: float


class Listener(Protocol):
    def on_event(self, kind: str, node: int, t: float, data: dict[str, Any]) -> None: ...


@dataclass
class NodeState:
    spec: NodeSpec
    queue: deque = field(default_factory=deque)
    last_gen: float | None = None
    gen_version: int = 0
    generated: int = 0
    alive: bool = True


class SlottedNetwork:
    def __init__(self, nodes: list[NodeSpec], ch: ChannelParams, slot_length: float, slot_cycle: int,
                 offsets: dict[int, int], routing: RoutingTable, seed: int = 0,
                 interferers: list[Interferer] | None = None, overhead_s: float = 0.0,
                 listeners: list[Listener] | None = None,
                 piggyback_fn: Callable[[int, float], Any] | None = None,
                 slot_hooks: dict[int, Callable[["SlottedNetwork", int, float], bool]] | None = None):
        self.ch = ch
        self.seed = seed
        self.engine = Engine()
        self.nodes: dict[int, NodeState] = {n.id: NodeState(replace(n)) for n in sorted(nodes, key=lambda n: n.id)}
        self.clock = SlotClock(slot_length)
        self.slot_cycle = slot_cycle
        self.offsets = dict(offsets)
        self.routing = routing
        self.overhead_s = overhead_s
        self.medium = Medium(ch, channel_rng(seed), self.position)
        self.medium.interferers.extend(interferers or [])
        self.rngs = {nid: node_rng(seed, nid) for nid in self.nodes}
        self.packets = PacketFactory()
        self.ledger = EnergyLedger()
        self.listeners = list(listeners or [])
        self.piggyback_fn = piggyback_fn
        self.piggyback_bytes = 0
        # a hook may claim a node's slot (e.g. for control packets) by returning True
        self.slot_hooks = dict(slot_hooks or {})
        self._at_boundary: list[Callable[["SlottedNetwork", float], None]] = []
        self.sent: list[SentRecord] = []
        self.received: list[RxRecord] = []
        self._started = False

    # -- accessors ----------------------------------------------------------
    def position(self, nid: int) -> Position:
        return self.nodes[nid].spec.position

    def spec(self, nid: int) -> NodeSpec:
        return self.nodes[nid].spec

    def _emit(self, kind: str, node: int, t: float, **data) -> None:
        for lst in self.listeners:
            lst.on_event(kind, node, t, data)

    # -- lifecycle ------------------------------------------------------------
    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for nid, st in self.nodes.items():
            self._schedule_generation(st, first=True)
        self.engine.schedule(self.clock.next_boundary(self.engine.now), EventKind.TIMER, -1, self._on_slot)

    def run(self, until: float) -> None:
        self.start()
        self.engine.run(until)

    def at(self, time: float, fn: Callable[["SlottedNetwork", float], None], target: int = -1) -> None:
        self.engine.schedule(time, EventKind.TIMER, target, lambda ev: fn(self, ev.time))

    def at_boundary(self, fn: Callable[["SlottedNetwork", float], None]) -> None:
        """Run ``fn`` at the next slot boundary, before anyone transmits in that slot."""
        self._at_boundary.append(fn)

    # -- traffic ------------------------------------------------------------------
    def _schedule_generation(self, st: NodeState, first: bool = False) -> None:
        spec = st.spec
        if spec.sending_rate <= 0 or spec.traffic == "none" or spec.sink is None:
            return
        now = self.engine.now
        if spec.traffic == "poisson":
            t = now + float(self.rngs[spec.id].exponential(1.0 / spec.sending_rate))
        elif first or st.last_gen is None:
            t = max(now, spec.phase)
        else:
            t = max(now, st.last_gen + 1.0 / spec.sending_rate)
        version = st.gen_version
        self.engine.schedule(t, EventKind.SENSOR_SAMPLE, spec.id, lambda ev: self._on_generate(st, version))

    def _on_generate(self, st: NodeState, version: int) -> None:
        if version != st.gen_version:
            return
        t = self.engine.now
        spec = st.spec
        st.last_gen = t
        if st.alive and spec.enabled:
            pkt = self.packets.make(PacketKind.DATA, spec.id, spec.sink, spec.packet_size, t)
            st.queue.append(pkt)
            st.generated += 1
            self._emit("generate", spec.id, t, packet=pkt)
        self._schedule_generation(st)

    # -- mutations ----------------------------------------------------------------
    def set_rate(self, nid: int, rate: float) -> None:
        st = self.nodes[nid]
        st.spec.sending_rate = rate
        st.gen_version += 1
        self._schedule_generation(st)
        self._emit("config", nid, self.engine.now, field="sending_rate", value=rate)

    def set_packet_size(self, nid: int, size: int) -> None:
        self.nodes[nid].spec.packet_size = size
        self._emit("config", nid, self.engine.now, field="packet_size", value=size)

    def set_power(self, nid: int, power_w: float) -> None:
        self.nodes[nid].spec.power_w = power_w
        self._emit("config", nid, self.engine.now, field="power_w", value=power_w)

    def set_slot_length(self, length: float) -> float:
        at = self.clock.change_length(self.engine.now, length)
        for nid in self.nodes:
            self._emit("config", nid, self.engine.now, field="slot_length", value=length, effective=at)
        return at

    def set_enabled(self, nid: int, enabled: bool) -> None:
        self.nodes[nid].spec.enabled = enabled
        self._emit("config", nid, self.engine.now, field="enabled", value=enabled)

    def move(self, nid: int, pos: Position) -> None:
        self.nodes[nid].spec.position = pos
        self._emit("config", nid, self.engine.now, field="location", value=pos.as_tuple())

    # -- MAC --------------------------------------------------------------------------
    def _on_slot(self, ev) -> None:
        t = self.engine.now
        pending, self._at_boundary = self._at_boundary, []
        for fn in pending:
            fn(self, t)
        k = self.clock.index(t)
        for nid, st in self.nodes.items():
            if self.offsets.get(nid) != k % self.slot_cycle:
                continue
            if not (st.alive and st.spec.enabled):
                continue
            hook = self.slot_hooks.get(nid)
            if hook is not None and hook(self, nid, t):
                continue
            if not st.queue:
                continue
            self.transmit(nid, st.queue.popleft(), t)
        self.engine.schedule(self.clock.start_of(k + 1), EventKind.TIMER, -1, self._on_slot)

    def transmit(self, nid: int, pkt: Packet, t: float, power_w: float | None = None,
                 hop: int | None = None) -> Transmission:
        st = self.nodes[nid]
        spec = st.spec
        power = spec.power_w if power_w is None else power_w
        if hop is None:
            hop = next_hop(self.routing, nid, pkt.dst)
        if self.piggyback_fn is not None and pkt.kind is PacketKind.DATA:
            extra = self.piggyback_fn(nid, t)
            if extra is not None:
                pkt.piggyback = (pkt.piggyback or []) + [extra]
                pkt.size_bytes += self.piggyback_bytes
        duration = transmission_delay(pkt.size_bytes, self.ch, self.overhead_s)
        tx = Transmission(pkt, power, t, t + duration, spec.position, sender=nid, next_hop=hop)
        self.ledger.charge(nid, t, power, duration, pkt.kind.value)
        if math.isfinite(spec.energy_j) and self.ledger.consumed(nid) >= spec.energy_j:
            st.alive = False
        self.sent.append(SentRecord(t, nid, pkt.id, pkt.origin, pkt.size_bytes, power, duration, pkt.created_at))
        self._emit("send", nid, t, tx=tx)
        for r, arrival, end in self.medium.register(tx, list(self.nodes)):
            self.engine.schedule(end, EventKind.RX_END, r, lambda ev, tx=tx: self._on_rx_end(tx, ev.target))
        return tx

    def _on_rx_end(self, tx: Transmission, r: int) -> None:
        rec = self.medium.deliver(tx, r)
        st = self.nodes[r]
        if not (st.alive and st.spec.enabled):
            return
        intended = tx.next_hop == r
        pkt = tx.packet
        self.received.append(RxRecord(self.engine.now, r, tx.sender, pkt.id, pkt.origin, pkt.size_bytes,
                                      rec.outcome, rec.snr_db, intended, pkt.created_at))
        self._emit("receive", r, self.engine.now, tx=tx, reception=rec, intended=intended)
        if intended and rec.outcome is Outcome.DELIVERED and pkt.kind is PacketKind.DATA and pkt.dst != r:
            st.queue.append(pkt)

    # -- summaries --------------------------------------------------------------------
    def counts(self, t0: float, t1: float) -> dict[int, dict[str, int]]:
        out = {nid: {"sent": 0, "sent_own": 0, "sent_relay": 0, "received": 0, "received_bits": 0}
               for nid in self.nodes}
        for s in self.sent:
            if t0 <= s.time < t1:
                c = out[s.node]
                c["sent"] += 1
                c["sent_own" if s.origin == s.node else "sent_relay"] += 1
        for r in self.received:
            if t0 <= r.time < t1 and r.intended and r.outcome is Outcome.DELIVERED:
                out[r.node]["received"] += 1
                out[r.node]["received_bits"] += 8 * r.size
        return out
