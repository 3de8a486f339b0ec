"""Re-simulating the network from what the central replica knows."""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..localdt.allocation import StaleReplica
from ..localdt.twin import LocalTwin
from ..protocols.routing import RoutingTable
from ..sim.channel import ChannelParams, Position
from ..sim.network import NodeSpec, SlottedNetwork
from .replica import Fact, GlobalReplica, Payload

_SETTERS = {
    "sending_rate": lambda n, nid, v: n.set_rate(nid, v),
    "packet_size": lambda n, nid, v: n.set_packet_size(nid, v),
    "power_w": lambda n, nid, v: n.set_power(nid, v),
    "enabled": lambda n, nid, v: n.set_enabled(nid, v),
    "location": lambda n, nid, v: n.move(nid, Position(*v)),
}


def build_network(replica: GlobalReplica, ch: ChannelParams, seed: int = 0, overhead_s: float = 0.0
                  ) -> SlottedNetwork:
    """A slotted network configured from the replica's timelines."""
    specs, routing = [], RoutingTable()
    offsets, cycle, slot_tl = {}, 1, {}
    mutations = []
    for n, e in sorted(replica.node_info.items()):
        loc = e.value_at("location", 0.0)
        if loc is None:
            continue
        phase = e.value("phase")
        rate = e.value_at("sending_rate", 0.0, 0.0) if phase is not None else 0.0
        sink = e.value("sink")
        specs.append(NodeSpec(n, Position(*loc), kind=e.value("kind", "sensor"),
                              power_w=e.value_at("power_w", 0.0, 10.0),
                              packet_size=e.value_at("packet_size", 0.0, 400), sending_rate=rate,
                              phase=phase if phase is not None else 0.0,
                              sink=sink if sink is not None and sink != n else None))
        hop = e.value("next_hop")
        if hop is not None and sink is not None and sink != n:
            routing.set(n, sink, hop)
        if e.value("offset") is not None:
            offsets[n] = e.value("offset")
        cycle = max(cycle, e.value("slot_cycle", 1))
        for t, v in e.timeline("slot_length"):
            slot_tl[t] = v
        for name, setter in _SETTERS.items():
            if name == "sending_rate" and phase is None:
                continue
            for t, v in e.timeline(name):
                if t > 0:
                    mutations.append((t, n, name, v))
    if not slot_tl:
        raise StaleReplica("replica has no slot schedule")
    first = min(slot_tl)
    net = SlottedNetwork(specs, ch, slot_tl[first], cycle, offsets, routing, seed=seed, overhead_s=overhead_s)
    for t, L in sorted(slot_tl.items()):
        if t > first:
            net.at(t, lambda nn, tt, L=L: nn.set_slot_length(L))
    for t, n, name, v in sorted(mutations, key=lambda m: (m[0], m[1], m[2])):
        net.at(t, lambda nn, tt, n=n, name=name, v=v: _SETTERS[name](nn, n, v))
    for name, tl in replica.env_info.items():
        if name.startswith("interference_w@"):
            node = int(name.split("@")[1])
            for t, w in sorted(tl.items()):
                net.at(t, lambda nn, tt, node=node, w=w: nn.medium.extra_noise.__setitem__(node, w))
    return net


@dataclass
class GlobalPrediction:
    until: float
    bucket_s: float
    throughput_bps: list[float]
    received: list[int]


def simulate_global(replica: GlobalReplica, ch: ChannelParams, until: float, bucket_s: float = 100.0,
                    sink: int | None = None, seed: int = 0, overhead_s: float = 0.0,
                    now: float | None = None, max_age_s: float = math.inf) -> GlobalPrediction:
    """Run the replica network from t=0 to ``until`` and bucket the sink's throughput."""
    if now is not None:
        for n, e in replica.node_info.items():
            if now - e.freshness > max_age_s:
                raise StaleReplica(f"node {n} last heard {now - e.freshness:.1f} s ago (bound {max_age_s} s)")
    net = build_network(replica, ch, seed, overhead_s)
    net.run(until)
    sink = sink if sink is not None else replica.network_info.get("sink")
    nb = int(math.ceil(until / bucket_s - 1e-9))
    thr, rec = [], []
    for k in range(nb):
        c = net.counts(k * bucket_s, min((k + 1) * bucket_s, until))
        bits = c[sink]["received_bits"] if sink in c else 0
        thr.append(bits / bucket_s)
        rec.append(c[sink]["received"] if sink in c else 0)
    return GlobalPrediction(until, bucket_s, thr, rec)


class GlobalTwin:
    """Central twin hosted on ``host``: aggregates piggybacked uploads it receives
    and facts from the host's own local twin."""

    def __init__(self, host: int, local: LocalTwin, ch: ChannelParams, overhead_s: float = 0.0, seed: int = 0):
        self.host = host
        self.local = local
        self.ch = ch
        self.overhead_s = overhead_s
        self.seed = seed
        self.replica = GlobalReplica()
        self.replica.network_info["sink"] = host
        self.uploads = 0

    def on_event(self, kind: str, node: int, t: float, data: dict) -> None:
        if kind != "receive" or node != self.host:
            return
        rec, pkt = data["reception"], data["tx"].packet
        if rec.ok and pkt.piggyback:
            payloads = [p for p in pkt.piggyback if isinstance(p, Payload)]
            self.uploads += len(payloads)
            self.replica.aggregate(payloads)

    def sync_local(self, t: float) -> None:
        facts = tuple(self.local.known.values())
        self.replica.aggregate([Payload(self.host, t, facts)])
        for e in self.replica.node_info.values():
            for ts, w in e.timeline("interference_w"):
                self.replica.set_env(f"interference_w@{e.node}", ts, w)
        routing = {}
        for n, e in self.replica.node_info.items():
            if e.value("next_hop") is not None and e.value("sink") not in (None, n):
                routing[n] = e.value("next_hop")
        self.replica.network_info["next_hop"] = routing

    def predict(self, t: float, bucket_s: float = 100.0) -> GlobalPrediction:
        self.sync_local(t)
        return simulate_global(self.replica, self.ch, t, bucket_s, self.host, self.seed, self.overhead_s)
