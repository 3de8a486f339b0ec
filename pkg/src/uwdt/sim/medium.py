"""Shared acoustic medium: arrivals, collisions and bit corruption."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .channel import (ChannelParams, Position, ber, packet_error_probability, propagation_delay,
                      received_intensity_w, snr_db, snr_from_powers)
from .packets import Transmission


class Outcome(str, Enum):
    DELIVERED = "Delivered"
    CORRUPTED = "Corrupted"
    COLLIDED = "Collided"
    OUT_OF_RANGE = "OutOfRange"


@dataclass(frozen=True)
class Reception:
    outcome: Outcome
    receiver: int
    arrival: float
    end: float
    snr_db: float
    ber: float
    bit_errors: int = 0
    signal_w: float = 0.0

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.DELIVERED


@dataclass
class Interferer:
    position: Position
    electric_w: float
    start: float = 0.0
    end: float = float("inf")

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


class Medium:
    """Tracks in-flight receptions per receiver.

    ``locate`` maps a node id to its current position.  Collisions destroy
    every overlapping reception (no capture); a node transmitting while a
    reception is in progress loses that reception.
    """

    def __init__(self, ch: ChannelParams, rng: np.random.Generator, locate: Callable[[int], Position]):
        self.ch = ch
        self.rng = rng
        self.locate = locate
        self.interferers: list[Interferer] = []
        # extra noise intensity per receiving node, used by replicas that only know an aggregate estimate
        self.extra_noise: dict[int, float] = {}
        self._rx: dict[int, list[tuple[float, float, int]]] = defaultdict(list)
        self._tx_busy: dict[int, list[tuple[float, float]]] = defaultdict(list)

    def interference_at(self, pos: Position, t: float) -> float:
        total = 0.0
        for itf in self.interferers:
            if itf.active(t) and itf.electric_w > 0:
                total += received_intensity_w(itf.electric_w * self.ch.efficiency, itf.position.distance(pos), self.ch)
        return total

    def in_range(self, a: Position, b: Position) -> bool:
        return a.distance(b) <= self.ch.range_m

    def register(self, tx: Transmission, receivers: list[int]) -> list[tuple[int, float, float]]:
        """Put ``tx`` on the medium; returns (receiver, arrival, end) for every audible receiver."""
        self._tx_busy[tx.sender].append((tx.start, tx.end))
        out = []
        for r in receivers:
            if r == tx.sender:
                continue
            pos = self.locate(r)
            if not self.in_range(tx.tx_pos, pos):
                continue
            arrival = tx.start + propagation_delay(tx.tx_pos, pos, self.ch)
            end = arrival + tx.duration
            self._rx[r].append((arrival, end, tx.packet.id))
            out.append((r, arrival, end))
        return out

    def deliver(self, tx: Transmission, receiver: int) -> Reception:
        """Outcome of ``tx`` at ``receiver``; call once the reception has ended."""
        pos = self.locate(receiver)
        if not self.in_range(tx.tx_pos, pos):
            return Reception(Outcome.OUT_OF_RANGE, receiver, float("nan"), float("nan"), float("-inf"), 0.5)
        arrival = tx.start + propagation_delay(tx.tx_pos, pos, self.ch)
        end = arrival + tx.duration
        itf = self.interference_at(pos, arrival) + self.extra_noise.get(receiver, 0.0)
        signal = received_intensity_w(tx.tx_power_w * self.ch.efficiency, tx.tx_pos.distance(pos), self.ch)
        s = snr_from_powers(signal, itf, self.ch)
        p_bit = ber(s)
        collided = any(
            pid != tx.packet.id and a < end and arrival < e for a, e, pid in self._rx[receiver]
        ) or any(a < end and arrival < e for a, e in self._tx_busy[receiver])
        self._prune(receiver, arrival)
        if collided:
            return Reception(Outcome.COLLIDED, receiver, arrival, end, s, p_bit, 0, signal)
        errors = int(self.rng.binomial(tx.packet.bits, p_bit)) if p_bit > 0 else 0
        if errors:
            return Reception(Outcome.CORRUPTED, receiver, arrival, end, s, p_bit, errors, signal)
        return Reception(Outcome.DELIVERED, receiver, arrival, end, s, p_bit, 0, signal)

    def loss_probability(self, tx: Transmission, receiver: int) -> float:
        pos = self.locate(receiver)
        itf = self.interference_at(pos, tx.start) + self.extra_noise.get(receiver, 0.0)
        s = snr_db(tx, pos, itf, self.ch)
        return packet_error_probability(ber(s), tx.packet.bits)

    def _prune(self, receiver: int, before: float, horizon: float = 120.0) -> None:
        cutoff = before - horizon
        rx = self._rx[receiver]
        if len(rx) > 64:
            self._rx[receiver] = [x for x in rx if x[1] > cutoff]
        busy = self._tx_busy[receiver]
        if len(busy) > 64:
            self._tx_busy[receiver] = [x for x in busy if x[1] > cutoff]
