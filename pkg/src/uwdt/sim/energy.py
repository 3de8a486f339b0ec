from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass


@dataclass(frozen=True)
class EnergyRecord:
    node: int
    time: float
    power_w: float
    duration_s: float
    tag: str = ""

    @property
    def joules(self) -> float:
        return self.power_w * self.duration_s


class EnergyLedger:
    """Electric energy charged per transmission."""

    def __init__(self):
        self.records: list[EnergyRecord] = []
        self._per_node: dict[int, float] = defaultdict(float)

    def charge(self, node: int, time: float, power_w: float, duration_s: float, tag: str = "") -> float:
        rec = EnergyRecord(node, time, power_w, duration_s, tag)
        self.records.append(rec)
        self._per_node[node] += rec.joules
        return rec.joules

    def consumed(self, node: int) -> float:
        return self._per_node.get(node, 0.0)

    def total(self, tag: str | None = None) -> float:
        if tag is None:
            return sum(r.joules for r in self.records)
        return sum(r.joules for r in self.records if r.tag == tag)

    def per_node(self) -> dict[int, float]:
        return dict(sorted(self._per_node.items()))
