"""Traditional global status collection on a clustered network.

The central node broadcasts a SCHEDULE packet that buoys and relays
forward down the routing tree; every notified node then sends a STATUS
packet that is forwarded hop by hop to the central node.  Times and energy
come from the transmissions actually simulated.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..protocols.pmac import color_offsets
from ..sim.channel import ChannelParams, Position, transmission_delay
from ..sim.energy import EnergyLedger
from ..sim.engine import Engine, EventKind
from ..sim.medium import Medium, Outcome
from ..sim.packets import BROADCAST, PacketFactory, PacketKind, Transmission
from ..sim.rng import aux_rng, channel_rng
from .replica import EntryStatus, NSRow

CENTRAL, BUOY, SN, AUV = "central", "buoy", "sn", "auv"


@dataclass
class ClusterNode:
    id: int
    kind: str
    position: Position
    energy_j: float = math.inf
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class ClusterTopology:
    nodes: dict[int, ClusterNode]
    range_m: float
    parent: dict[int, int] = field(default_factory=dict)
    unreachable: set[int] = field(default_factory=set)

    @property
    def central(self) -> int:
        return next(n.id for n in self.nodes.values() if n.kind == CENTRAL)

    def neighbors(self, nid: int) -> list[int]:
        p = self.nodes[nid].position
        return [m for m, o in self.nodes.items() if m != nid and p.distance(o.position) <= self.range_m]

    def children(self, nid: int) -> list[int]:
        return sorted(c for c, p in self.parent.items() if p == nid)

    def build_tree(self) -> None:
        """Parent = neighbour one hop closer to the central node; SNs and AUVs
        prefer buoys, then SNs; buoys reach the central node directly."""
        root = self.central
        depth = {root: 0}
        frontier = [root]
        self.parent = {}
        while frontier:
            nxt = []
            for u in frontier:
                for v in sorted(self.neighbors(u), key=lambda v: self.nodes[u].position.distance(self.nodes[v].position)):
                    if v in depth:
                        continue
                    kind_v, kind_u = self.nodes[v].kind, self.nodes[u].kind
                    # members attach to the cluster head, not straight to the central node
                    if kind_u == CENTRAL and kind_v != BUOY:
                        continue
                    if kind_u == AUV:
                        continue
                    depth[v] = depth[u] + 1
                    self.parent[v] = u
                    nxt.append(v)
            frontier = sorted(nxt)
        self.unreachable = set(self.nodes) - set(depth)

    def conflicts(self) -> dict[int, set[int]]:
        """Two nodes conflict when one hears the other or they share a neighbour."""
        nb = {n: set(self.neighbors(n)) for n in self.nodes}
        return {n: {m for m in self.nodes if m != n and (m in nb[n] or nb[n] & nb[m])} for n in self.nodes}


def cluster_topology(n_sns: int, n_auvs: int, seed: int = 0, area_m: float = 20000.0,
                     range_m: float = 6000.0, sn_depth_m: float = 1000.0,
                     energy_range_j: tuple[float, float] = (30e3, 100e3)) -> ClusterTopology:
    """Central node mid-area, one buoy per quadrant, SNs spread evenly over the
    quadrants, AUVs placed at random.  SN positions for a given ``seed`` are
    drawn per quadrant in order, so a larger scenario extends a smaller one."""
    rng = aux_rng(seed, 11)
    c = area_m / 2
    q = 0.2 * area_m
    nodes = {0: ClusterNode(0, CENTRAL, Position(c, c, 0.0))}
    quadrants = [(c - q, c - q), (c + q, c - q), (c - q, c + q), (c + q, c + q)]
    for i, (x, y) in enumerate(quadrants, start=1):
        nodes[i] = ClusterNode(i, BUOY, Position(x, y, 0.0))
    nid = 5
    per_quadrant = [[] for _ in range(4)]
    draws = rng.uniform(0.0, 1.0, size=(64, 4, 2))
    energies = rng.uniform(*energy_range_j, size=(64, 4))
    for k in range(n_sns):
        qi = k % 4
        j = k // 4
        x0 = (qi % 2) * c
        y0 = (qi // 2) * c
        pos = Position(float(x0 + 500 + draws[j, qi, 0] * (c - 1000)), float(y0 + 500 + draws[j, qi, 1] * (c - 1000)),
                       -sn_depth_m)
        nodes[nid] = ClusterNode(nid, SN, pos, float(energies[j, qi]))
        per_quadrant[qi].append(nid)
        nid += 1
    auv_rng = aux_rng(seed, 12)
    auv_draws = auv_rng.uniform(2000, area_m - 2000, size=(64, 2))
    for k in range(n_auvs):
        nodes[nid] = ClusterNode(nid, AUV, Position(float(auv_draws[k, 0]), float(auv_draws[k, 1]), -200.0))
        nid += 1
    topo = ClusterTopology(nodes, range_m)
    topo.build_tree()
    return topo


SCENARIOS = {"a": (12, 2), "b": (16, 3), "c": (20, 4), "d": (24, 6)}


@dataclass
class TgnsoResult:
    schedule_time_s: float
    upload_time_s: float
    total_time_s: float
    energy_j: float
    ns: list[NSRow]
    unreachable: list[int]
    transmissions: int
    ledger: EnergyLedger

    def as_row(self) -> dict:
        return {"schedule_time_s": self.schedule_time_s, "upload_time_s": self.upload_time_s,
                "total_time_s": self.total_time_s, "energy_j": self.energy_j, "transmissions": self.transmissions,
                "unreachable": len(self.unreachable)}


def tgnso_collect(topo: ClusterTopology, ch: ChannelParams | None = None, power_w: float = 32.0,
                  slot_length_s: float = 7.92, min_cycle: int = 4, schedule_bytes: int = 50,
                  status_bytes: int = 600, seed: int = 0, start: float = 0.0) -> TgnsoResult:
    ch = ch or ChannelParams(range_m=topo.range_m)
    if topo.range_m != ch.range_m:
        ch = ChannelParams(**{**ch.__dict__, "range_m": topo.range_m})
    reachable = sorted(set(topo.nodes) - topo.unreachable)
    conf = topo.conflicts()
    offsets, cycle = color_offsets({n: conf[n] & set(reachable) for n in reachable}, min_cycle)
    engine = Engine(start)
    medium = Medium(ch, channel_rng(seed), lambda n: topo.nodes[n].position)
    ledger = EnergyLedger()
    packets = PacketFactory()
    root = topo.central
    queues: dict[int, deque] = {n: deque() for n in reachable}
    notified: dict[int, float] = {root: start}
    collected: dict[int, float] = {}
    count = [0]

    bcast = packets.make(PacketKind.SCHEDULE, root, BROADCAST, schedule_bytes, start)
    queues[root].append(bcast)

    def on_slot(ev):
        t = engine.now
        k = round((t - start) / slot_length_s)
        for n in reachable:
            if k % cycle != offsets[n] or not queues[n]:
                continue
            pkt = queues[n].popleft()
            hop = BROADCAST if pkt.kind is PacketKind.SCHEDULE else topo.parent[n]
            dur = transmission_delay(pkt.size_bytes, ch)
            tx = Transmission(pkt, power_w, t, t + dur, topo.nodes[n].position, sender=n, next_hop=hop)
            ledger.charge(n, t, power_w, dur, pkt.kind.value)
            count[0] += 1
            for r, arrival, end in medium.register(tx, reachable):
                engine.schedule(end, EventKind.RX_END, r, lambda e, tx=tx: on_rx(tx, e.target))
        if len(collected) < len(reachable) - 1:
            engine.schedule(t + slot_length_s, EventKind.TIMER, -1, on_slot)

    def on_rx(tx: Transmission, r: int):
        rec = medium.deliver(tx, r)
        t = engine.now
        pkt = tx.packet
        if pkt.kind is PacketKind.SCHEDULE:
            if rec.ok and topo.parent.get(r) == tx.sender and r not in notified:
                notified[r] = t
                if topo.children(r):
                    queues[r].append(packets.make(PacketKind.SCHEDULE, r, BROADCAST, schedule_bytes, t))
                queues[r].append(packets.make(PacketKind.STATUS, r, root, status_bytes, t))
            elif not rec.ok and topo.parent.get(r) == tx.sender and r not in notified:
                # parent repeats the schedule in its next slot
                queues[tx.sender].appendleft(packets.make(PacketKind.SCHEDULE, tx.sender, BROADCAST,
                                                          schedule_bytes, t))
            return
        if tx.next_hop != r:
            return
        if not rec.ok:
            queues[tx.sender].appendleft(pkt)
            return
        if r == root:
            collected.setdefault(pkt.origin, t)
        else:
            queues[r].append(pkt)

    engine.schedule(start, EventKind.TIMER, -1, on_slot)
    horizon = start + slot_length_s * cycle * (4 * len(reachable) + 10)
    engine.run(horizon)
    members = [n for n in reachable if n != root]
    if set(collected) != set(members):
        missing = sorted(set(members) - set(collected))
        raise RuntimeError(f"status collection did not finish; missing {missing}")
    schedule_time = max(notified.values()) - start
    total = max(collected.values()) - start if collected else 0.0
    ns = [NSRow(n, topo.nodes[n].kind, topo.nodes[n].position.as_tuple(),
                float(np.linalg.norm(topo.nodes[n].velocity)), topo.nodes[n].energy_j,
                "sink" if n == root else ("relay" if topo.children(n) else "source"), EntryStatus.OBSERVED, 1.0)
          for n in reachable]
    return TgnsoResult(schedule_time, total - schedule_time, total, ledger.total(), ns,
                       sorted(topo.unreachable), count[0], ledger)
