"""Network events during a deployment and the scheduler's responses to them,
plus the lifetime cost comparison between piggyback maintenance and
repeated full status collection."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any

from ..protocols.pmac import color_offsets, compute_slot_length
from ..sim.channel import ChannelParams, Position, received_intensity_w, snr_for_packet_error, \
    snr_from_powers, transmission_delay
from ..globaldt.tgnso import AUV, BUOY, CENTRAL, ClusterNode, ClusterTopology, tgnso_collect

POWER_GRID = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


@dataclass(frozen=True)
class NetworkEvent:
    time: float
    kind: str  # drift | exhaustion | auv_join
    node: int
    position: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class Response:
    event: NetworkEvent
    detected_at: float
    decided_at: float
    action: str  # adjust_power_slot | auv_substitute | none | reschedule
    params: dict = field(default_factory=dict)

    @property
    def delay_s(self) -> float:
        return self.decided_at - self.event.time


def required_power(distance_m: float, ch: ChannelParams, size_bytes: int, target_per: float,
                   grid=POWER_GRID) -> float:
    need = snr_for_packet_error(target_per, 8 * size_bytes)
    for p in grid:
        sig = received_intensity_w(p * ch.efficiency, distance_m, ch)
        if snr_from_powers(sig, 0.0, ch) >= need:
            return p
    return grid[-1]


class EventResponder:
    """Keeps the central node's view of a cluster topology and decides what to
    do when a maintenance tick reveals an event."""

    def __init__(self, topo: ClusterTopology, ch: ChannelParams, status_bytes: int = 600, target_per: float = 0.01,
                 min_cycle: int = 4):
        self.topo = copy.deepcopy(topo)
        self.ch = ch
        self.status_bytes = status_bytes
        self.target_per = target_per
        self.min_cycle = min_cycle
        self.dead: set[int] = set()
        self.busy_auvs: set[int] = set()

    def _pos(self, n: int) -> Position:
        return self.topo.nodes[n].position

    def respond(self, ev: NetworkEvent, detected_at: float, compute_s: float) -> Response:
        handler = getattr(self, f"_on_{ev.kind}")
        action, params = handler(ev)
        return Response(ev, detected_at, detected_at + compute_s, action, params)

    def _on_drift(self, ev: NetworkEvent):
        node = self.topo.nodes[ev.node]
        node.position = Position(*ev.position)
        parent = self.topo.parent.get(ev.node)
        if parent is None or self._pos(parent).distance(node.position) > self.topo.range_m:
            # out of reach of the old parent: attach to the nearest live neighbour that has a route
            cands = [m for m in self.topo.neighbors(ev.node)
                     if m not in self.dead and (m in self.topo.parent or m == self.topo.central)
                     and self.topo.nodes[m].kind != AUV and not self._descends(m, ev.node)]
            if cands:
                parent = min(cands, key=lambda m: (self._pos(m).distance(node.position), m))
                self.topo.parent[ev.node] = parent
        d = self._pos(parent).distance(node.position) if parent is not None else self.topo.range_m
        power = required_power(d, self.ch, self.status_bytes, self.target_per)
        prop = max(self._pos(a).distance(self._pos(b)) for a, b in self.topo.parent.items()
                   if a not in self.dead and b not in self.dead) / self.ch.sound_speed
        slot = compute_slot_length(transmission_delay(self.status_bytes, self.ch), prop)
        return "adjust_power_slot", {"parent": parent, "power_w": power, "slot_length_s": float(slot)}

    def _descends(self, a: int, b: int) -> bool:
        cur, seen = a, set()
        while cur in self.topo.parent and cur not in seen:
            seen.add(cur)
            cur = self.topo.parent[cur]
            if cur == b:
                return True
        return False

    def _on_exhaustion(self, ev: NetworkEvent):
        self.dead.add(ev.node)
        children = [c for c in self.topo.children(ev.node) if c not in self.dead]
        if not children:
            return "none", {}
        free = [n for n, x in self.topo.nodes.items()
                if x.kind == AUV and n not in self.dead and n not in self.busy_auvs]
        where = self._pos(ev.node)
        if not free:
            return "none", {"orphans": children}
        auv = min(free, key=lambda n: (self._pos(n).distance(where), n))
        self.busy_auvs.add(auv)
        self.topo.nodes[auv].position = where
        self.topo.parent[auv] = self.topo.parent[ev.node]
        for c in children:
            self.topo.parent[c] = auv
        return "auv_substitute", {"auv": auv, "children": children,
                                  "position": tuple(float(v) for v in where.as_tuple())}

    def _on_auv_join(self, ev: NetworkEvent):
        pos = Position(*ev.position)
        self.topo.nodes[ev.node] = ClusterNode(ev.node, AUV, pos)
        nb = [m for m in self.topo.neighbors(ev.node) if m not in self.dead and self.topo.nodes[m].kind != AUV
              and (m in self.topo.parent or m == self.topo.central)]
        buoys = [m for m in nb if self.topo.nodes[m].kind == BUOY]
        pool = buoys or [m for m in nb if self.topo.nodes[m].kind != CENTRAL]
        if not pool:
            return "reschedule", {"parent": None}
        parent = min(pool, key=lambda m: (self._pos(m).distance(pos), m))
        self.topo.parent[ev.node] = parent
        live = [n for n in self.topo.nodes if n not in self.dead]
        conf = {n: c & set(live) for n, c in self.topo.conflicts().items() if n in live}
        offsets, cycle = color_offsets(conf, self.min_cycle)
        return "reschedule", {"parent": parent, "offset": int(offsets[ev.node]), "cycle": int(cycle)}


def physical_topology(topo: ClusterTopology, events: list[NetworkEvent]) -> ClusterTopology:
    """Ground-truth network after ``events``: drifted nodes moved, exhausted nodes
    removed, joined AUVs added; the collection tree is rebuilt from scratch."""
    t = copy.deepcopy(topo)
    for ev in events:
        if ev.kind == "drift":
            t.nodes[ev.node].position = Position(*ev.position)
        elif ev.kind == "exhaustion":
            t.nodes.pop(ev.node, None)
        elif ev.kind == "auv_join":
            t.nodes[ev.node] = ClusterNode(ev.node, AUV, Position(*ev.position))
    t.build_tree()
    return t


@dataclass
class LifetimeRow:
    k: int
    time: float
    event: str
    tgnso_time_s: float
    tgnso_energy_j: float
    tnsd_time_s: float
    tnsd_energy_j: float

    @property
    def gap_time_s(self) -> float:
        return self.tgnso_time_s - self.tnsd_time_s

    @property
    def gap_energy_j(self) -> float:
        return self.tgnso_energy_j - self.tnsd_energy_j


@dataclass
class LifetimeResult:
    rows: list[LifetimeRow]
    responses: list[Response]
    initial: Any


def simulate_lifetime(topo: ClusterTopology, events: list[NetworkEvent], period_s: float = 600.0,
                      compute_s: float = 0.1, piggyback_bytes: int = 0, data_bytes: int = 600,
                      tx_power_w: float = 32.0, seed: int = 0, ch: ChannelParams | None = None) -> LifetimeResult:
    """Cumulative status-acquisition cost over a deployment.

    Both approaches start with one full collection.  On every event the
    traditional approach collects again over the current network; the
    twin-based one learns of the event at the next maintenance tick from
    piggybacked data and only spends computation time, plus the air time of
    the extra piggyback bytes (one attachment per node per period).
    """
    ch = ch or ChannelParams(range_m=topo.range_m)
    first = tgnso_collect(topo, ch, power_w=tx_power_w, seed=seed)
    extra_air = transmission_delay(data_bytes + piggyback_bytes, ch) - transmission_delay(data_bytes, ch)
    responder = EventResponder(topo, ch)
    g_t, g_e = first.total_time_s, first.energy_j
    d_t, d_e = first.total_time_s, first.energy_j
    rows = [LifetimeRow(0, 0.0, "initial", g_t, g_e, d_t, d_e)]
    responses = []
    seen: list[NetworkEvent] = []
    last_t = 0.0
    for k, ev in enumerate(sorted(events, key=lambda e: (e.time, e.node)), start=1):
        seen.append(ev)
        phys = physical_topology(topo, seen)
        again = tgnso_collect(phys, ch, power_w=tx_power_w, seed=seed + k)
        g_t += again.total_time_s
        g_e += again.energy_j
        tick = math.ceil(ev.time / period_s - 1e-12) * period_s
        responses.append(responder.respond(ev, tick, compute_s))
        live = len(phys.nodes) - len(phys.unreachable) - 1
        periods = math.floor(tick / period_s) - math.floor(last_t / period_s)
        last_t = tick
        d_t += compute_s
        d_e += live * periods * extra_air * tx_power_w
        rows.append(LifetimeRow(k, ev.time, ev.kind, g_t, g_e, d_t, d_e))
    return LifetimeResult(rows, responses, first)


def default_events(topo: ClusterTopology, period_s: float = 600.0) -> list[NetworkEvent]:
    """Two drifts, a relay and an edge node running dry, and an AUV joining."""
    sns = sorted(n for n, x in topo.nodes.items() if x.kind == "sn" and n not in topo.unreachable)
    relays = [n for n in sns if topo.children(n)]
    edges = [n for n in sns if not topo.children(n)]
    evs = []
    a = edges[0]
    p = topo.nodes[a].position
    evs.append(NetworkEvent(1.3 * period_s, "drift", a, (p.x + 1500.0, p.y + 500.0, p.z)))
    b = edges[1]
    p = topo.nodes[b].position
    evs.append(NetworkEvent(2.6 * period_s, "drift", b, (p.x - 800.0, p.y + 900.0, p.z)))
    if relays:
        evs.append(NetworkEvent(3.2 * period_s, "exhaustion", relays[0]))
    evs.append(NetworkEvent(4.5 * period_s, "exhaustion", edges[-1]))
    new_id = max(topo.nodes) + 1
    c = topo.nodes[topo.central].position
    evs.append(NetworkEvent(5.7 * period_s, "auv_join", new_id, (c.x + 3000.0, c.y - 2500.0, -200.0)))
    return evs
