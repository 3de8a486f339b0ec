from .channel import (ChannelParams, Position, attenuation_db, ber, calibrate_framing, packet_error_probability,
                      propagation_delay, snr_db, snr_for_packet_error, transmission_delay)
from .engine import CausalityError, Engine, Event, EventKind
from .energy import EnergyLedger
from .medium import Interferer, Medium, Outcome, Reception
from .packets import BROADCAST, Packet, PacketFactory, PacketKind, Transmission
from .trace import MetricLog

__all__ = [
    "BROADCAST", "CausalityError", "ChannelParams", "EnergyLedger", "Engine", "Event", "EventKind",
    "Interferer", "Medium", "MetricLog", "Outcome", "Packet", "PacketFactory", "PacketKind", "Position",
    "Reception", "Transmission", "attenuation_db", "ber", "calibrate_framing", "packet_error_probability",
    "propagation_delay", "snr_db", "snr_for_packet_error", "transmission_delay",
]
