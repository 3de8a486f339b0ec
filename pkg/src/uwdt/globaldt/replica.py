"""Central replica assembled from local-twin uploads."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable


class EntryStatus(str, Enum):
    OBSERVED = "OBSERVED"
    PREDICTED = "PREDICTED"


@dataclass(frozen=True)
class Fact:
    """One statement about a node: ``field`` had ``value`` from ``timestamp`` on."""
    node: int
    field: str
    timestamp: float
    value: Any


@dataclass(frozen=True)
class Payload:
    origin: int
    timestamp: float
    facts: tuple[Fact, ...]


@dataclass
class NodeEntry:
    node: int
    fields: dict[str, tuple[float, Any]] = field(default_factory=dict)
    timelines: dict[str, dict[float, Any]] = field(default_factory=dict)
    freshness: float = -math.inf
    status: EntryStatus = EntryStatus.PREDICTED
    confidence: float = 0.0

    def value(self, name: str, default=None):
        rec = self.fields.get(name)
        return rec[1] if rec is not None else default

    def timeline(self, name: str) -> list[tuple[float, Any]]:
        return sorted(self.timelines.get(name, {}).items(), key=lambda kv: kv[0])

    def value_at(self, name: str, t: float, default=None):
        v = default
        for ts, val in self.timeline(name):
            if ts <= t:
                v = val
            else:
                break
        return v


class GlobalReplica:
    """Node, network and environment information held by the central twin.

    Merging is newest-timestamp-wins per (node, field); equal timestamps are
    broken by comparing the values' repr so that merge order never matters.
    """

    def __init__(self, nodes: Iterable[int] = ()):
        self.node_info: dict[int, NodeEntry] = {n: NodeEntry(n) for n in nodes}
        self.network_info: dict[str, Any] = {}
        self.env_info: dict[str, dict[float, Any]] = {}
        self.stale_ignored = 0

    def entry(self, node: int) -> NodeEntry:
        if node not in self.node_info:
            self.node_info[node] = NodeEntry(node)
        return self.node_info[node]

    @property
    def freshness(self) -> dict[int, float]:
        return {n: e.freshness for n, e in sorted(self.node_info.items())}

    def aggregate(self, payloads: Iterable[Payload]) -> None:
        for p in payloads:
            if p.timestamp is None or not math.isfinite(p.timestamp):
                raise ValueError(f"payload from {p.origin} lacks a timestamp")
            for f in p.facts:
                self._merge(f, p.timestamp)

    def _merge(self, f: Fact, reported_at: float) -> None:
        e = self.entry(f.node)
        e.timelines.setdefault(f.field, {})
        tl = e.timelines[f.field]
        if f.timestamp not in tl or _order(f.value) > _order(tl[f.timestamp]):
            tl[f.timestamp] = f.value
        cur = e.fields.get(f.field)
        if cur is None or (f.timestamp, _order(f.value)) > (cur[0], _order(cur[1])):
            e.fields[f.field] = (f.timestamp, f.value)
        elif (f.timestamp, _order(f.value)) < (cur[0], _order(cur[1])):
            self.stale_ignored += 1
        seen = max(reported_at, f.timestamp)
        if seen > e.freshness:
            e.freshness = seen
        e.status = EntryStatus.OBSERVED
        e.confidence = 1.0

    def set_env(self, name: str, t: float, value) -> None:
        self.env_info.setdefault(name, {})[t] = value

    def env_timeline(self, name: str) -> list[tuple[float, Any]]:
        return sorted(self.env_info.get(name, {}).items(), key=lambda kv: kv[0])

    def snapshot_key(self) -> tuple:
        """Order-independent fingerprint used to compare replicas."""
        return tuple(
            (n, tuple(sorted((k, tuple(sorted(v.items(), key=lambda kv: kv[0]))) for k, v in e.timelines.items())),
             tuple(sorted(e.fields.items())), e.freshness)
            for n, e in sorted(self.node_info.items()))


def _order(v) -> str:
    return repr(v)


# -- patching -------------------------------------------------------------------------------------

def patch(replica: GlobalReplica, now: float, bound_s: float, tau_s: float = 300.0) -> list[int]:
    """Predict entries that are staler than ``bound_s``.

    Mobile nodes are dead-reckoned from their last velocity, residual energy
    is drawn down at the node's duty-cycle power, everything else is held.
    Returns the ids of the patched nodes.
    """
    patched = []
    for n, e in sorted(replica.node_info.items()):
        staleness = now - e.freshness
        if staleness <= bound_s:
            continue
        base_t = e.freshness if math.isfinite(e.freshness) else now
        dt = max(now - base_t, 0.0)
        loc = e.value("location")
        vel = e.value("velocity")
        if loc is not None and vel is not None and any(vel):
            loc_t = e.fields["location"][0]
            span = now - loc_t
            e.fields["location"] = (now, tuple(a + b * span for a, b in zip(loc, vel)))
        energy = e.value("residual_energy_j")
        draw = e.value("duty_power_w", 0.0)
        if energy is not None and draw:
            et = e.fields["residual_energy_j"][0]
            e.fields["residual_energy_j"] = (now, max(energy - draw * (now - et), 0.0))
        e.status = EntryStatus.PREDICTED
        e.confidence = math.exp(-dt / tau_s) if math.isfinite(e.freshness) else 0.0
        patched.append(n)
    return patched


# -- network status -------------------------------------------------------------------------------

@dataclass(frozen=True)
class NSRow:
    node: int
    kind: str
    location: tuple[float, float, float] | None
    speed: float
    residual_energy_j: float
    role: str
    status: EntryStatus
    confidence: float
    tasks: tuple[str, ...] = ()


def network_status(replica: GlobalReplica, schedules: dict | None = None) -> list[NSRow]:
    """One row per known node, built from replica contents only."""
    rows = []
    sink = replica.network_info.get("sink")
    routing = replica.network_info.get("next_hop", {})
    relays = set(routing.values()) - {sink}
    for n, e in sorted(replica.node_info.items()):
        vel = e.value("velocity") or (0.0, 0.0, 0.0)
        role = "sink" if n == sink else ("relay" if n in relays else ("source" if n in routing else "idle"))
        tasks = ()
        if schedules and n in schedules:
            tasks = tuple(sorted({d.task for d in schedules[n].duties}))
        rows.append(NSRow(n, e.value("kind", "sensor"), e.value("location"), math.sqrt(sum(v * v for v in vel)),
                          e.value("residual_energy_j", math.inf), role, e.status, e.confidence, tasks))
    return rows
