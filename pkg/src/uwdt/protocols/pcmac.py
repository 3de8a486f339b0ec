"""Power-controlled MAC: handshake sizing, re-handshake on loss, twin-assisted sizing."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

HANDSHAKE_GRID = (6.0, 12.0, 18.0, 24.0, 30.0)
FINE_GRID = (0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 30.0)


class PcMode(str, Enum):
    FIXED = "fixed"
    RELINK = "relink"
    DT = "dt"


class Action(str, Enum):
    KEEP = "Keep"
    REHANDSHAKE = "Rehandshake"


class HandshakeLost(RuntimeError):
    pass


@dataclass
class PcMacState:
    mode: PcMode = PcMode.FIXED
    max_power_w: float = 30.0
    current_power_w: float = 30.0
    ber_threshold: float = 0.05
    rts_bytes: int = 30
    history: deque = field(default_factory=lambda: deque(maxlen=64))

    def __post_init__(self):
        self.mode = PcMode(self.mode)
        if not 0 < self.current_power_w <= self.max_power_w:
            raise ValueError(f"power {self.current_power_w} outside (0, {self.max_power_w}]")

    def record(self, snr_db: float, power_w: float, ok: bool) -> None:
        self.history.append((snr_db, power_w, ok))

    def observed_loss(self, window: int | None = None) -> float:
        h = list(self.history)[-window:] if window else list(self.history)
        if not h:
            return 0.0
        return sum(1 for *_, ok in h if not ok) / len(h)


def round_up(power_w: float, grid: Sequence[float], max_power_w: float) -> float:
    for p in sorted(grid):
        if p >= power_w - 1e-9 and p <= max_power_w:
            return p
    return max_power_w


def min_power(rx_signal_w: float, probe_power_w: float, noise_w: float, target_snr_db: float) -> float:
    """Electric power that lifts the received signal to ``target_snr_db`` over ``noise_w``.

    The received intensity scales linearly with transmit power, so one probe
    at ``probe_power_w`` fixes the link gain.
    """
    if rx_signal_w <= 0:
        return math.inf
    gain = rx_signal_w / probe_power_w
    return 10.0 ** (target_snr_db / 10.0) * noise_w / gain


def pcmac_handshake(state: PcMacState, rts_rx_signal_w: float, noise_w: float, target_snr_db: float,
                    grid: Sequence[float] = HANDSHAKE_GRID) -> float:
    """Receiver side of the RTS/CTS exchange: size the sender's power from the RTS it heard at max power."""
    if rts_rx_signal_w is None:
        raise HandshakeLost("RTS not received")
    need = min_power(rts_rx_signal_w, state.max_power_w, noise_w, target_snr_db)
    state.current_power_w = round_up(need, grid, state.max_power_w)
    return state.current_power_w


def pcmac_r_step(state: PcMacState, observed_ber: float) -> Action:
    if state.mode is not PcMode.RELINK:
        raise ValueError("re-handshake step only applies to relink mode")
    return Action.REHANDSHAKE if observed_ber > state.ber_threshold else Action.KEEP


class PowerTwin(Protocol):
    def estimate_noise_w(self) -> float: ...
    def choose_power(self, current_w: float, grid: Sequence[float]) -> tuple[float, bool]: ...


def pcmac_dt_step(state: PcMacState, local_dt: PowerTwin, grid: Sequence[float] = FINE_GRID) -> float:
    """Let the twin pick the cheapest power its replica predicts will meet the demand.
    No control packets are exchanged; falls back to max power when nothing is feasible."""
    if state.mode is not PcMode.DT:
        raise ValueError("twin-assisted step only applies to dt mode")
    power, feasible = local_dt.choose_power(state.current_power_w, [p for p in grid if p <= state.max_power_w])
    state.current_power_w = power if feasible else state.max_power_w
    return state.current_power_w
