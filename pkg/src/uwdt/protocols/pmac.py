"""Pipelined slot MAC: every node owns one slot per cycle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

_EPS = 1e-9


def compute_slot_length(tx_delay_s: float, prop_delay_s: float) -> int:
    if tx_delay_s < 0 or prop_delay_s < 0:
        raise ValueError("delays must be nonnegative")
    return math.ceil(tx_delay_s + prop_delay_s - _EPS)


@dataclass
class SlotSchedule:
    slot_length_s: float
    slot_cycle: int
    offset_of: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.slot_length_s <= 0:
            raise ValueError("slot length must be positive")
        if self.slot_cycle < 1:
            raise ValueError("slot cycle must be >= 1")
        for node, off in self.offset_of.items():
            if not 0 <= off < self.slot_cycle:
                raise ValueError(f"offset {off} of node {node} outside [0, {self.slot_cycle})")

    def slot_index(self, t: float) -> int:
        return math.floor(t / self.slot_length_s + _EPS)

    def slot_start(self, index: int) -> float:
        return index * self.slot_length_s


def pmac_may_send(schedule: SlotSchedule, node: int, t: float) -> bool:
    if node not in schedule.offset_of:
        raise KeyError(f"node {node} has no slot in the schedule")
    return schedule.slot_index(t) % schedule.slot_cycle == schedule.offset_of[node]


def chain_offsets(chain: list[int], cycle: int) -> dict[int, int]:
    """Offset = hop depth mod cycle, so consecutive hops fire in consecutive slots."""
    return {node: depth % cycle for depth, node in enumerate(chain)}


def color_offsets(conflicts: dict[int, set[int]], min_cycle: int = 1) -> tuple[dict[int, int], int]:
    """Greedy colouring of an interference graph; returns offsets and the cycle length used."""
    order = sorted(conflicts, key=lambda n: (-len(conflicts[n]), n))
    offsets: dict[int, int] = {}
    for n in order:
        taken = {offsets[m] for m in conflicts[n] if m in offsets}
        c = 0
        while c in taken:
            c += 1
        offsets[n] = c
    cycle = max(min_cycle, max(offsets.values(), default=0) + 1)
    return dict(sorted(offsets.items())), cycle


class SlotClock:
    """Network-wide slot numbering that survives slot-length changes.

    A change takes effect at the first slot boundary at or after the
    requested time; numbering continues from there.
    """

    def __init__(self, slot_length_s: float, epoch: float = 0.0):
        self.length = slot_length_s
        self.epoch = epoch
        self.epoch_index = 0

    def index(self, t: float) -> int:
        return self.epoch_index + math.floor((t - self.epoch) / self.length + _EPS)

    def start_of(self, index: int) -> float:
        return self.epoch + (index - self.epoch_index) * self.length

    def next_boundary(self, t: float) -> float:
        k = self.index(t)
        start = self.start_of(k)
        return start if abs(start - t) < _EPS else self.start_of(k + 1)

    def change_length(self, t: float, new_length: float) -> float:
        at = self.next_boundary(t)
        self.epoch_index = self.index(at)
        self.epoch = at
        self.length = new_length
        return at
