"""Delivery of central artifacts (model parameters, schemes, schedules) to nodes.

Artifacts travel as DATA packets over the simulated network.  A hop that
does not deliver is retried in the sender's next owned slot, at most
``retries`` times per hop.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..protocols.routing import NoRoute, path
from ..sim.medium import Outcome
from ..sim.network import SlottedNetwork
from ..sim.packets import PacketKind


class Undeliverable(RuntimeError):
    def __init__(self, nodes: dict[int, str]):
        self.nodes = dict(nodes)
        super().__init__("undeliverable: " + ", ".join(f"{n} ({why})" for n, why in sorted(nodes.items())))


@dataclass
class DistributionResult:
    delivered: dict[int, bytes] = field(default_factory=dict)
    delivered_at: dict[int, float] = field(default_factory=dict)
    undeliverable: dict[int, str] = field(default_factory=dict)
    attempts: int = 0
    start: float = 0.0

    def latency(self, node: int) -> float:
        return self.delivered_at[node] - self.start

    def raise_for_failures(self) -> None:
        if self.undeliverable:
            raise Undeliverable(self.undeliverable)


class _Tracker:
    def __init__(self, net: SlottedNetwork, retries: int, result: DistributionResult):
        self.net = net
        self.retries = retries
        self.result = result
        self.fragments: dict[int, tuple[int, int]] = {}   # packet id -> (dst, index)
        self.holder: dict[int, int] = {}
        self.tries: dict[int, int] = {}
        self.received: dict[int, dict[int, bytes]] = {}
        self.expected: dict[int, int] = {}
        self.packets = {}

    def on_event(self, kind, node, t, data):
        if kind == "send":
            tx = data["tx"]
            pid = tx.packet.id
            if pid not in self.fragments or self.holder.get(pid) != node:
                return
            self.result.attempts += 1
            deadline = tx.end + self.net.ch.range_m / self.net.ch.sound_speed + 1e-6
            self.net.at(deadline, lambda net, now, pid=pid, hop=tx.next_hop, sender=node: self._check(pid, sender, hop))
        elif kind == "receive":
            tx, rec = data["tx"], data["reception"]
            pid = tx.packet.id
            if pid not in self.fragments or not data["intended"] or rec.outcome is not Outcome.DELIVERED:
                return
            if self.holder.get(pid) != tx.sender:
                return
            self.holder[pid] = node
            self.tries[pid] = 0
            dst, idx = self.fragments[pid]
            if node == dst:
                parts = self.received.setdefault(dst, {})
                parts[idx] = tx.packet.payload
                if len(parts) == self.expected[dst] and dst not in self.result.undeliverable:
                    self.result.delivered[dst] = b"".join(parts[i] for i in range(len(parts)))
                    self.result.delivered_at[dst] = t

    def _check(self, pid: int, sender: int, hop: int) -> None:
        if self.holder.get(pid) != sender:
            return
        dst, _ = self.fragments[pid]
        self.tries[pid] = self.tries.get(pid, 0) + 1
        if self.tries[pid] > self.retries:
            self.result.undeliverable.setdefault(dst, f"hop {sender}->{hop} failed {self.tries[pid]} times")
            del self.holder[pid]
            return
        # relay already dequeued it; put it back at the head for the next owned slot
        self.net.nodes[sender].queue.appendleft(self.packets[pid])


def distribute(net: SlottedNetwork, source: int, artifacts: dict[int, bytes], retries: int = 3,
               max_packet_bytes: int = 400, timeout_s: float | None = None) -> DistributionResult:
    """Send ``artifacts[node]`` from ``source`` to each node and run the network until
    every artifact is delivered or given up on."""
    t0 = net.engine.now
    result = DistributionResult(start=t0)
    if not artifacts:
        return result
    tracker = _Tracker(net, retries, result)
    net.listeners.append(tracker)
    src_queue = net.nodes[source].queue
    hops_total = 0
    for dst in sorted(artifacts):
        blob = bytes(artifacts[dst])
        if dst == source:
            result.delivered[dst], result.delivered_at[dst] = blob, t0
            continue
        if not (net.nodes.get(dst) and net.nodes[dst].spec.enabled and net.nodes[dst].alive):
            result.undeliverable[dst] = "node unavailable"
            continue
        try:
            hops_total = max(hops_total, len(path(net.routing, source, dst)) - 1)
        except NoRoute:
            result.undeliverable[dst] = "no route"
            continue
        chunks = [blob[i:i + max_packet_bytes] for i in range(0, len(blob), max_packet_bytes)] or [b""]
        tracker.expected[dst] = len(chunks)
        for i, chunk in enumerate(chunks):
            pkt = net.packets.make(PacketKind.DATA, source, dst, max(len(chunk), 1), t0, payload=chunk)
            tracker.fragments[pkt.id] = (dst, i)
            tracker.holder[pkt.id] = source
            tracker.packets[pkt.id] = pkt
            src_queue.append(pkt)
    if timeout_s is None:
        frames = len(tracker.fragments) + hops_total
        timeout_s = net.clock.length * net.slot_cycle * (frames + 1) * (retries + 1) + net.clock.length
    net.start()
    end = t0 + timeout_s
    step = net.clock.length * net.slot_cycle
    t = t0
    while t < end and tracker.holder and any(
            tracker.fragments[p][0] not in result.delivered for p in tracker.holder):
        t = min(end, t + step)
        net.engine.run(t)
    for pid in list(tracker.holder):
        dst = tracker.fragments[pid][0]
        if dst not in result.delivered:
            result.undeliverable.setdefault(dst, "timed out")
    net.listeners.remove(tracker)
    return result
