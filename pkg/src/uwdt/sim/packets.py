from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .channel import Position

BROADCAST = -1


class PacketKind(str, Enum):
    DATA = "DATA"
    RTS = "RTS"
    CTS = "CTS"
    SCHEDULE = "SCHEDULE"
    STATUS = "STATUS"
    DT_UPLOAD = "DT_UPLOAD"
    INTERFERENCE = "INTERFERENCE"


PIGGYBACK_KINDS = (PacketKind.DATA, PacketKind.STATUS)


@dataclass
class Packet:
    id: int
    kind: PacketKind
    src: int
    dst: int
    size_bytes: int
    created_at: float
    origin: int | None = None
    piggyback: Any = None
    payload: Any = None

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError(f"packet {self.id}: size must be positive")
        if self.piggyback is not None and self.kind not in PIGGYBACK_KINDS:
            raise ValueError(f"packet {self.id}: piggyback not allowed on {self.kind.value}")
        if self.origin is None:
            self.origin = self.src

    @property
    def bits(self) -> int:
        return 8 * self.size_bytes


class PacketFactory:
    """Hands out run-unique packet ids."""

    def __init__(self):
        self._ids = itertools.count(1)

    def make(self, kind: PacketKind, src: int, dst: int, size_bytes: int, created_at: float, **kw) -> Packet:
        return Packet(next(self._ids), kind, src, dst, size_bytes, created_at, **kw)


@dataclass
class Transmission:
    packet: Packet
    tx_power_w: float
    start: float
    end: float
    tx_pos: Position
    sender: int = field(default=-1)
    next_hop: int = field(default=BROADCAST)

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError("transmission must have positive duration")
        if self.tx_power_w <= 0:
            raise ValueError("transmit power must be positive")
        if self.sender == -1:
            self.sender = self.packet.src

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def energy_j(self) -> float:
        return self.tx_power_w * self.duration
