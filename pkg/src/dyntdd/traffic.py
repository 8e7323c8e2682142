"""Poisson packet arrivals and per-UE DL/UL buffer accounting."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .topology import STREAM_TRAFFIC

PACKET_BITS_DEFAULT = 4_000_000       # 0.5 decimal Mbytes

DL = 0
UL = 1
DIRECTIONS = ("dl", "ul")


@dataclass(frozen=True)
class TrafficSource:
    """Average arrival rates (packets/s per UE) and the fixed packet size."""

    lambda_dl: float
    lambda_ul: float
    packet_bits: int = PACKET_BITS_DEFAULT

    @classmethod
    def from_dl_rate(cls, lambda_dl: float, packet_bits: int = PACKET_BITS_DEFAULT):
        # UL arrival rate is half of the DL one in the default profiles
        return cls(lambda_dl=lambda_dl, lambda_ul=lambda_dl / 2.0, packet_bits=packet_bits)


@dataclass
class ArrivalEvent:
    subframe: int
    ue: int
    direction: int
    bits: int


def generate_arrivals(
    source: TrafficSource, n_ues: int, horizon_subframes: int, seed: int
) -> list[ArrivalEvent]:
    """Homogeneous Poisson arrivals per UE and direction, timestamped to subframes.

    Inter-arrival times are exponential draws from a dedicated rng stream,
    so the event list is a pure function of (source, n_ues, horizon, seed).
    """
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, STREAM_TRAFFIC])
    horizon_s = horizon_subframes * 1e-3
    events: list[ArrivalEvent] = []
    for ue in range(n_ues):
        for direction, lam in ((DL, source.lambda_dl), (UL, source.lambda_ul)):
            if lam <= 0.0:
                continue
            t = 0.0
            while True:
                t += rng.exponential(1.0 / lam)
                if t >= horizon_s:
                    break
                events.append(
                    ArrivalEvent(
                        subframe=int(t * 1000.0),
                        ue=ue,
                        direction=direction,
                        bits=source.packet_bits,
                    )
                )
    events.sort(key=lambda e: (e.subframe, e.ue, e.direction))
    return events


@dataclass
class _Packet:
    remaining_bits: int
    arrival_subframe: int


@dataclass
class PacketBuffer:
    """FIFO packet queue; `total_bits` always equals the sum of queued remainders."""

    packets: list[_Packet] = field(default_factory=list)
    total_bits: int = 0

    def enqueue(self, bits: int, subframe: int) -> None:
        if bits <= 0:
            raise ValueError("packet must carry a positive number of bits")
        self.packets.append(_Packet(remaining_bits=bits, arrival_subframe=subframe))
        self.total_bits += bits

    def drain(self, bits: int, subframe: int) -> list[tuple[int, int]]:
        """Serve up to `bits` head-of-line first; returns (arrival, completion) pairs.

        Draining more than the buffered total clamps: the surplus is discarded.
        """
        if bits < 0:
            raise ValueError("cannot drain a negative bit count")
        completed: list[tuple[int, int]] = []
        remaining = min(bits, self.total_bits)
        self.total_bits -= remaining
        while remaining > 0:
            head = self.packets[0]
            if remaining >= head.remaining_bits:
                remaining -= head.remaining_bits
                completed.append((head.arrival_subframe, subframe))
                self.packets.pop(0)
            else:
                head.remaining_bits -= remaining
                remaining = 0
        return completed

    def check_total(self) -> None:
        assert self.total_bits == sum(p.remaining_bits for p in self.packets)
        assert all(p.remaining_bits > 0 for p in self.packets)


def export_arrival_trace(events: list[ArrivalEvent]) -> str:
    """CSV trace `subframe,ue,direction,bits` for replay across implementations."""
    out = io.StringIO()
    out.write("subframe,ue,direction,bits\n")
    for e in events:
        out.write(f"{e.subframe},{e.ue},{DIRECTIONS[e.direction]},{e.bits}\n")
    return out.getvalue()


def import_arrival_trace(text: str) -> list[ArrivalEvent]:
    events = []
    lines = text.strip().splitlines()
    if lines and lines[0].startswith("subframe"):
        lines = lines[1:]
    for line in lines:
        sf, ue, direction, bits = line.strip().split(",")
        events.append(
            ArrivalEvent(
                subframe=int(sf),
                ue=int(ue),
                direction=DIRECTIONS.index(direction),
                bits=int(bits),
            )
        )
    return events
