"""Keeping the central replica fresh by piggybacking on normal DATA traffic.

Each node attaches a payload to its DATA traffic at least once per
``period_s``: in the last owned slot before the period runs out.  The payload carries the node's own state plus the newest
facts it has overheard about its neighbours, so a node that is silent
towards the central node can still be covered by a neighbour.
"""
from __future__ import annotations

import math

from ..sim.medium import Outcome
from ..sim.network import SlottedNetwork
from ..sim.packets import PacketKind
from .replica import Fact, GlobalReplica, Payload, patch


def node_facts(net: SlottedNetwork, nid: int, t: float) -> tuple[Fact, ...]:
    st = net.nodes[nid]
    spec = st.spec
    residual = spec.energy_j - net.ledger.consumed(nid) if math.isfinite(spec.energy_j) else math.inf
    return (Fact(nid, "location", t, spec.position.as_tuple()),
            Fact(nid, "residual_energy_j", t, residual),
            Fact(nid, "power_w", t, spec.power_w),
            Fact(nid, "sending_rate", t, spec.sending_rate),
            Fact(nid, "packet_size", t, spec.packet_size),
            Fact(nid, "enabled", t, spec.enabled and st.alive))


class PiggybackMaintenance:
    """Attach to a network; ``replica`` is the central node's view.

    ``piggyback_bytes`` grows every carrying packet by that many bytes, so the
    extra air time (and energy) shows up in the network's own ledger.
    """

    def __init__(self, net: SlottedNetwork, central: int, period_s: float = 100.0, piggyback_bytes: int = 0,
                 share_neighbours: bool = True):
        if period_s <= 0:
            raise ValueError("period must be positive")
        self.net = net
        self.central = central
        self.period_s = period_s
        self.piggyback_bytes = piggyback_bytes
        self.share = share_neighbours
        self.replica = GlobalReplica(net.nodes)
        self.last_attach: dict[int, float] = {}
        self.known: dict[int, dict[tuple[int, str], Fact]] = {n: {} for n in net.nodes}
        self.attached = 0
        self._prev = net.piggyback_fn
        net.piggyback_bytes = piggyback_bytes
        net.piggyback_fn = self._piggyback
        net.listeners.append(self)

    def _piggyback(self, nid: int, t: float):
        extra = self._prev(nid, t) if self._prev is not None else None
        if nid == self.central:
            self.replica.aggregate([Payload(nid, t, node_facts(self.net, nid, t))])
            return extra
        last = self.last_attach.get(nid, -math.inf)
        # attach in the last owned slot that still meets the period
        lead = self.net.clock.length * self.net.slot_cycle
        if t + lead < last + self.period_s - 1e-9:
            return extra
        self.last_attach[nid] = t
        facts = list(node_facts(self.net, nid, t))
        if self.share:
            facts += [f for (n, _), f in sorted(self.known[nid].items(), key=lambda kv: kv[0]) if n != nid]
        self.attached += 1
        payload = Payload(nid, t, tuple(facts))
        return payload if extra is None else [extra, payload]

    def on_event(self, kind, node, t, data):
        if kind != "receive":
            return
        tx, rec = data["tx"], data["reception"]
        if rec.outcome is not Outcome.DELIVERED or tx.packet.kind is not PacketKind.DATA:
            return
        payloads = [p for p in _flatten(tx.packet.piggyback) if isinstance(p, Payload)]
        if not payloads:
            return
        if node == self.central and data["intended"]:
            self.replica.aggregate(payloads)
        elif self.share:
            book = self.known[node]
            for p in payloads:
                for f in p.facts:
                    cur = book.get((f.node, f.field))
                    if cur is None or f.timestamp > cur.timestamp:
                        book[(f.node, f.field)] = f

    def refresh_central(self, now: float) -> None:
        """The central node reads its own state directly."""
        self.replica.aggregate([Payload(self.central, now, node_facts(self.net, self.central, now))])

    def ages(self, now: float) -> dict[int, float]:
        self.refresh_central(now)
        return {n: now - f for n, f in self.replica.freshness.items()}

    def maintain(self, now: float, bound_s: float | None = None, tau_s: float = 300.0) -> list[int]:
        """Patch every entry staler than ``bound_s`` (default: two periods)."""
        self.refresh_central(now)
        return patch(self.replica, now, bound_s if bound_s is not None else 2 * self.period_s, tau_s)


def _flatten(pb):
    if pb is None:
        return []
    out = []
    for p in pb:
        out.extend(_flatten(p) if isinstance(p, list) else [p])
    return out


def piggyback_maintenance(net: SlottedNetwork, central: int, period_s: float = 100.0,
                          piggyback_bytes: int = 0) -> PiggybackMaintenance:
    return PiggybackMaintenance(net, central, period_s, piggyback_bytes)
