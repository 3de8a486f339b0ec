"""Parametric underwater acoustic channel.

Levels are in dB re 1 uPa (intensity referred to 1 m for sources).  Powers
passed around as "acoustic watts" are source powers; electric powers are
converted with the transducer efficiency before entering the channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

# source level of an omnidirectional projector radiating 1 acoustic watt
SL_PER_WATT_DB = 170.8


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite position {self}")

    def distance(self, other: "Position") -> float:
        return math.sqrt((self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2)

    def moved(self, dx: float, dy: float, dz: float = 0.0) -> "Position":
        return Position(self.x + dx, self.y + dy, self.z + dz)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class ChannelParams:
    sound_speed: float = 1500.0
    spreading_exponent: float = 1.5
    carrier_freq_khz: float = 10.0
    ambient_noise_db: float = 80.0
    rate_bps: float = 1500.0
    preamble_s: float = 0.5
    guard_s: float = 0.05
    # fraction of the raw bit rate left after framing/coding
    coding_efficiency: float = 1.0
    efficiency: float = 0.5
    range_m: float = math.inf

    def __post_init__(self):
        if self.sound_speed <= 0:
            raise ValueError("sound_speed must be positive")
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be positive")
        if not 1.0 <= self.spreading_exponent <= 2.0:
            raise ValueError("spreading_exponent must lie in [1, 2]")
        if not 0.0 < self.coding_efficiency <= 1.0:
            raise ValueError("coding_efficiency must lie in (0, 1]")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in (0, 1]")


def propagation_delay(a: Position, b: Position, ch: ChannelParams) -> float:
    return a.distance(b) / ch.sound_speed


def transmission_delay(size_bytes: int, ch: ChannelParams, overhead_s: float = 0.0) -> float:
    """Air time of one packet: preamble, coded payload and a fixed overhead."""
    if size_bytes <= 0:
        raise ValueError(f"packet size must be positive, got {size_bytes}")
    return ch.preamble_s + 8.0 * size_bytes / (ch.rate_bps * ch.coding_efficiency) + overhead_s


def calibrate_framing(points: list[tuple[int, float]], ch: ChannelParams) -> tuple[float, float]:
    """Fit (coding_efficiency, overhead_s) so that two measured air times are hit exactly.

    ``points`` holds two (size_bytes, seconds) pairs.
    """
    (s1, t1), (s2, t2) = points
    if s1 == s2:
        raise ValueError("calibration needs two distinct packet sizes")
    per_byte = ((t2 - ch.preamble_s) - (t1 - ch.preamble_s)) / (s2 - s1)
    overhead = (t1 - ch.preamble_s) - per_byte * s1
    efficiency = 8.0 / (ch.rate_bps * per_byte)
    return efficiency, overhead


def thorp_db_per_km(freq_khz: float) -> float:
    f2 = freq_khz * freq_khz
    return 0.11 * f2 / (1 + f2) + 44 * f2 / (4100 + f2) + 2.75e-4 * f2 + 0.003


def attenuation_db(distance_m: float, ch: ChannelParams) -> float:
    """Spreading plus Thorp absorption loss over ``distance_m``."""
    if distance_m <= 0:
        raise ValueError("attenuation is undefined at zero distance")
    spreading = ch.spreading_exponent * 10.0 * math.log10(distance_m)
    return spreading + thorp_db_per_km(ch.carrier_freq_khz) * distance_m / 1000.0


def source_level_db(acoustic_w: float) -> float:
    if acoustic_w <= 0:
        return -math.inf
    return SL_PER_WATT_DB + 10.0 * math.log10(acoustic_w)


def received_intensity_w(acoustic_w: float, distance_m: float, ch: ChannelParams) -> float:
    """Source power scaled down by the path loss (watts referred to 1 m)."""
    return acoustic_w * 10.0 ** (-attenuation_db(max(distance_m, 1.0), ch) / 10.0)


def noise_w(ch: ChannelParams) -> float:
    return 10.0 ** ((ch.ambient_noise_db - SL_PER_WATT_DB) / 10.0)


def snr_db(tx, rx_pos: Position, interference_w: float, ch: ChannelParams) -> float:
    """SNR of ``tx`` (a Transmission) at ``rx_pos``.

    ``interference_w`` is the interference intensity already present at the
    receiver, expressed in acoustic watts referred to 1 m.
    """
    signal = received_intensity_w(tx.tx_power_w * ch.efficiency, tx.tx_pos.distance(rx_pos), ch)
    return snr_from_powers(signal, interference_w, ch)


def snr_from_powers(signal_w: float, interference_w: float, ch: ChannelParams) -> float:
    if signal_w <= 0:
        return -math.inf
    return 10.0 * math.log10(signal_w / (noise_w(ch) + max(interference_w, 0.0)))


def ber(snr_db_value: float, modulation: str = "BPSK") -> float:
    """Bit error probability of coherent BPSK, Q(sqrt(2 snr))."""
    if modulation.upper() != "BPSK":
        raise ValueError(f"unsupported modulation {modulation!r}")
    if snr_db_value == -math.inf or math.isnan(snr_db_value):
        return 0.5
    lin = 10.0 ** (snr_db_value / 10.0)
    return float(0.5 * erfc(math.sqrt(lin)))


def packet_error_probability(bit_error: float, bits: int) -> float:
    """Probability that at least one of ``bits`` independent bits flips."""
    if bit_error <= 0:
        return 0.0
    return float(-np.expm1(bits * np.log1p(-min(bit_error, 1.0 - 1e-300))))


def snr_for_packet_error(target_per: float, bits: int) -> float:
    """Smallest SNR (dB) whose BPSK packet error probability is <= ``target_per``."""
    from scipy.optimize import brentq

    per_bit = -math.expm1(math.log1p(-target_per) / bits)
    return brentq(lambda s: ber(s) - per_bit, -30.0, 40.0, xtol=1e-12)
