"""Behavioral covert channels driven over the association simulator.

Three channels hide data in *how* packets are exchanged rather than in
field contents:

* multi-homing (MH): after a pre-agreed initiation sequence, every
  retransmission is routed over the alternate (source, destination)
  address pair that encodes the next symbol;
* multi-streaming (MS): the stream identifier of each DATA chunk
  carries the next symbol; the decoder reads identifiers in TSN order,
  so loss and reordering are harmless;
* partial-reliability hybrid: selected DATA chunks are withheld, a
  FORWARD_TSN moves the peer's cumulative ack past them, and once a
  SACK confirms the advance the withheld TSN is sent late with the
  covert bytes as its payload. The overt receiver already treats that
  TSN as delivered and discards the late chunk.

Covert streams are length-framed (see :mod:`sctpsteg.bits`) so the
receiver knows where the payload ends. Each ``*_send`` driver returns
a :class:`ChannelRun` with the full trace and measured throughput; the
matching ``*_receive`` works from the trace alone.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .bits import Bits, frame, unframe
from .sim import CaptureRecord, PathPlan, Simulation, PHASE_ESTABLISHED
from .wire import ChunkType, DataBody


class ChannelError(Exception):
    pass


class NotMultihomed(ChannelError):
    """Neither side offers enough alternate addresses for symbols."""


class PayloadExceedsRetransmissions(ChannelError):
    def __init__(self, remaining_bits: int) -> None:
        super().__init__(f"{remaining_bits} payload bits could not be placed")
        self.remaining_bits = remaining_bits


class TooFewStreams(ChannelError):
    pass


class NoEligibleChunks(ChannelError):
    pass


class InitiationNotFound(ChannelError):
    pass


# ---------------------------------------------------------------------------
# path codebook


@dataclass(frozen=True)
class PathCodebook:
    """Deterministic address-to-bits mapping for the multi-homing channel.

    Alternate addresses are sorted ascending by numeric value and the
    first power-of-two many on each side carry symbols (sender bits
    first, then receiver bits). A side without alternates contributes
    zero bits and falls back to its primary address.
    """

    src_choices: tuple[str, ...]
    dst_choices: tuple[str, ...]
    sender_bits: int
    receiver_bits: int

    @classmethod
    def from_path_plan(cls, plan: PathPlan) -> "PathCodebook":
        src = plan.alternates_src or (plan.primary[0],)
        dst = plan.alternates_dst or (plan.primary[1],)
        return cls(
            src,
            dst,
            int(math.log2(len(src))) if len(src) > 1 else 0,
            int(math.log2(len(dst))) if len(dst) > 1 else 0,
        )

    @property
    def symbol_bits(self) -> int:
        return self.sender_bits + self.receiver_bits

    @property
    def grid(self) -> tuple[tuple[str, str], ...]:
        """Every usable alternate pair, lexicographic."""
        return tuple((s, d) for s in self.src_choices for d in self.dst_choices)

    def encode(self, symbol: Bits) -> tuple[str, str]:
        padded = symbol + Bits([0] * (self.symbol_bits - len(symbol)))
        src_idx = padded[: self.sender_bits].to_int()
        dst_idx = padded[self.sender_bits :].to_int()
        return (self.src_choices[src_idx], self.dst_choices[dst_idx])

    def decode(self, pair: tuple[str, str]) -> Bits | None:
        try:
            src_idx = self.src_choices.index(pair[0])
            dst_idx = self.dst_choices.index(pair[1])
        except ValueError:
            return None
        if src_idx >= (1 << self.sender_bits) or dst_idx >= (1 << self.receiver_bits):
            return None
        return Bits.from_int(src_idx, self.sender_bits) + Bits.from_int(
            dst_idx, self.receiver_bits
        )


@dataclass(frozen=True)
class InitiationSequence:
    """Start-of-transmission marker: indices into the alternate grid."""

    path_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.path_indices:
            raise ValueError("initiation sequence must be non-empty")

    def pairs(self, codebook: PathCodebook) -> list[tuple[str, str]]:
        grid = codebook.grid
        for idx in self.path_indices:
            if not 0 <= idx < len(grid):
                raise ValueError(f"path index {idx} outside grid of {len(grid)}")
        return [grid[idx] for idx in self.path_indices]


def default_initiation_sequence(codebook: PathCodebook) -> InitiationSequence:
    # A repeated pair never occurs in round-robin path cycling, so this
    # marker cannot appear in covert-free retransmission traffic.
    last = len(codebook.grid) - 1
    return InitiationSequence((last, last))


# ---------------------------------------------------------------------------
# channel runs


@dataclass
class ChannelRun:
    trace: list[CaptureRecord]
    payload_bits: int
    channel_bits_sent: int
    span_us: int
    extra: dict = field(default_factory=dict)

    @property
    def bits_per_second(self) -> float:
        if self.span_us <= 0:
            return 0.0
        return self.channel_bits_sent * 1_000_000 / self.span_us


def _filler(prefix: str, i: int, size: int) -> bytes:
    stamp = f"{prefix}-{i:08d}|".encode()
    reps = size // len(stamp) + 1
    return (stamp * reps)[:size]


def _span_us(trace: list[CaptureRecord], period_us: int) -> int:
    data_ts = [
        rec.ts_us
        for rec in trace
        if rec.direction == "ab"
        and any(c.type == ChunkType.DATA for c in rec.packet().chunks)
    ]
    if not data_ts:
        return 0
    return max(trace[-1].ts_us, data_ts[-1]) - data_ts[0] + period_us


def _ensure_established(sim: Simulation) -> None:
    if sim.a.state.phase != PHASE_ESTABLISHED:
        sim.establish()


# ---------------------------------------------------------------------------
# multi-homing channel


def mh_send(
    sim: Simulation,
    payload: Bits,
    codebook: PathCodebook | None = None,
    init_seq: InitiationSequence | None = None,
    *,
    message_bytes: int = 32,
    batch_size: int = 64,
    max_batches: int = 400,
    allow_partial: bool = False,
) -> ChannelRun:
    """Send ``payload`` through retransmission path selection.

    Primary-path traffic is untouched; the driver keeps sending filler
    messages until natural losses have produced enough retransmissions
    to carry the initiation sequence and the framed payload. With
    ``allow_partial`` the run ends when the batch budget is spent and
    reports what was placed instead of raising.
    """
    _ensure_established(sim)
    codebook = codebook or PathCodebook.from_path_plan(sim.path_plan)
    if codebook.symbol_bits == 0:
        raise NotMultihomed("need at least two alternate addresses on one side")
    init_seq = init_seq or default_initiation_sequence(codebook)

    queue: list[tuple[tuple[str, str], int]] = []  # (pair, payload bits carried)
    if payload:
        for pair in init_seq.pairs(codebook):
            queue.append((pair, 0))
        for symbol in frame(payload).chunked(codebook.symbol_bits):
            queue.append((codebook.encode(symbol), len(symbol)))

    assigned: dict[int, tuple[str, str]] = {}
    consumed = {"bits": 0, "symbols": 0}
    position = {"next": 0}

    def hook(tsn: int, default: tuple[str, str]) -> tuple[str, str]:
        if tsn in assigned:
            return assigned[tsn]
        if position["next"] < len(queue):
            pair, nbits = queue[position["next"]]
            position["next"] += 1
            consumed["bits"] += nbits
            consumed["symbols"] += 1
            assigned[tsn] = pair
            return pair
        return default

    sim.retrans_path_hook = hook if payload else None
    counter = 0
    batches = 0
    while position["next"] < len(queue) or batches == 0:
        if batches >= max_batches:
            break
        batch = [
            (i % sim.streams, False, _filler("mh", counter + i, message_bytes))
            for i in range(batch_size)
        ]
        counter += batch_size
        sim.send_messages(batch)
        batches += 1
'''
    sim.retrans_path_hook = None
    remaining = sum(nbits for _, nbits in queue[position["next"] :])
    if remaining and not allow_partial:
        raise PayloadExceedsRetransmissions(remaining)
    return ChannelRun(
        list(sim.trace),
        len(payload),
        consumed["bits"],
        _span_us(sim.trace, sim.period_us),
        {"symbols_sent": consumed["symbols"], "messages": counter},
    )
