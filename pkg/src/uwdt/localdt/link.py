"""Link-level twin used for transmit-power decisions."""
from __future__ import annotations

import math
from collections import deque
from typing import Sequence

from ..protocols.routing import RoutingTable
from ..sim.channel import ChannelParams, Position, noise_w
from ..sim.network import NodeSpec, SlottedNetwork
from .allocation import AllocationScheme, Demand, EvaluationResult, OptimizationResult, optimize_scheme


class LinkTwin:
    """Twin of one node and the peer it sends to.

    It keeps the noise-plus-interference level implied by recently received
    packets (signal / SNR) and evaluates candidate powers by running the
    slotted simulator on a two-node replica with that interference added at
    the peer.
    """

    def __init__(self, owner: int, peer: int, own_pos: Position, peer_pos: Position, ch: ChannelParams,
                 packet_size: int, slot_length: float, overhead_s: float = 0.0, target_loss: float = 0.02,
                 history: int = 8, seed: int = 0):
        self.owner, self.peer = owner, peer
        self.own_pos, self.peer_pos = own_pos, peer_pos
        self.ch = ch
        self.packet_size = packet_size
        self.slot_length = slot_length
        self.overhead_s = overhead_s
        self.demand = Demand(max_loss=target_loss)
        self.samples: deque = deque(maxlen=history)
        self.seed = seed
        self.evaluations = 0

    def observe(self, signal_w: float, snr_db: float) -> None:
        if signal_w > 0 and math.isfinite(snr_db):
            self.samples.append(signal_w / 10.0 ** (snr_db / 10.0))

    def estimate_noise_w(self) -> float:
        """Mean of the recent samples that agree (within 0.1 dB) with the newest one,
        so a step change is not averaged with the level before it."""
        if not self.samples:
            return noise_w(self.ch)
        latest = self.samples[-1]
        recent = []
        for x in reversed(self.samples):
            if abs(10.0 * math.log10(x / latest)) > 0.1:
                break
            recent.append(x)
        return sum(recent) / len(recent)

    def latest_noise_w(self) -> float:
        return self.samples[-1] if self.samples else noise_w(self.ch)

    def evaluate(self, scheme: AllocationScheme, horizon_slots: int = 10, interference_w: float | None = None
                 ) -> EvaluationResult:
        """Replica run: the owner sends one packet per owned slot at ``scheme.power_w``."""
        self.evaluations += 1
        itf = max((self.estimate_noise_w() if interference_w is None else interference_w) - noise_w(self.ch), 0.0)
        L = self.slot_length
        nodes = [NodeSpec(self.owner, self.own_pos, power_w=scheme.power_w, packet_size=scheme.packet_size_bytes,
                          sending_rate=1.0 / (2 * L), phase=0.0, sink=self.peer),
                 NodeSpec(self.peer, self.peer_pos)]
        net = SlottedNetwork(nodes, self.ch, L, 2, {self.owner: 0, self.peer: 1},
                             RoutingTable({(self.owner, self.peer): self.peer}), seed=self.seed,
                             overhead_s=self.overhead_s)
        net.medium.extra_noise[self.peer] = itf
        expected = []
        net.listeners.append(_LossProbe(net, self.peer, expected))
        horizon = horizon_slots * 2 * L
        net.run(horizon)
        loss = sum(expected) / len(expected) if expected else 0.0
        c = net.counts(0, horizon)[self.peer]
        energy = net.ledger.consumed(self.owner)
        return EvaluationResult(throughput_bps=c["received_bits"] / horizon, loss=loss, energy_j=energy,
                                extra={"observed_loss": 1 - c["received"] / max(len(expected), 1)})

    def choose_power(self, current_w: float, grid: Sequence[float]) -> tuple[float, bool]:
        seed = AllocationScheme(power_w=current_w, slot_length_s=self.slot_length,
                                packet_size_bytes=self.packet_size, tunable=frozenset({"power_w"}))
        res: OptimizationResult = optimize_scheme(seed, self.demand, budget=3, evaluate=self.evaluate,
                                                  grids={"power_w": list(grid)})
        return res.scheme.power_w, res.feasible


class _LossProbe:
    def __init__(self, net: SlottedNetwork, receiver: int, out: list):
        self.net, self.receiver, self.out = net, receiver, out

    def on_event(self, kind, node, t, data):
        if kind == "send":
            self.out.append(self.net.medium.loss_probability(data["tx"], self.receiver))
