"""The 13 content-modification embedding methods.

Each method hides bits in one carrier field of an SCTP chunk or
variable parameter:

====== ==========================================================
 I1     INIT / INIT_ACK initiate tag (low bits)
 I2     INIT / INIT_ACK number of inbound streams (high bits)
 D1     DATA stream sequence number, unordered chunks only
 D2     DATA payload protocol identifier
 S1     SACK advertised receiver window, low bits
 S2     SACK duplicate-TSN list (one fabricated entry per chunk)
 A1     AUTH shared key identifier
 P1     PAD chunk padding bytes
 VP1    extra IPv4/IPv6 address parameter values
 VP2    HEARTBEAT sender-specific info bytes
 VP3    RANDOM parameter value (first 32 bits)
 VP4    ASCONF request correlation identifiers
 VP5    PADDING parameter bytes inside INIT
====== ==========================================================

Bits are written most-significant-bit first within each masked field
region; packets with several carriers are consumed in chunk order.
``embed`` fills carriers until the payload runs out (a final carrier
may be partially filled in its leading bit positions) and returns how
many bits were consumed; ``extract`` returns every carrier's full bit
region, so the first ``consumed`` bits always equal the embedded
prefix.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from enum import Enum

from .bits import Bits
from .wire import (
    AsconfBody,
    AuthBody,
    Chunk,
    ChunkType,
    DataBody,
    InitBody,
    Parameter,
    ParamType,
    SackBody,
    SctpPacket,
    compute_checksum,
    serialize_packet,
)


class StegError(Exception):
    """Base class for embedding/extraction failures."""


class CarrierMismatch(StegError):
    """The offered carrier is not the kind this method uses."""


class NoCarrier(StegError):
    """The packet holds no chunk or parameter this method can use."""


class CapacityZero(StegError):
    """Carriers exist but offer zero embeddable bits."""


class MethodId(str, Enum):
    I1 = "I1"
    I2 = "I2"
    D1 = "D1"
    D2 = "D2"
    S1 = "S1"
    S2 = "S2"
    A1 = "A1"
    P1 = "P1"
    VP1 = "VP1"
    VP2 = "VP2"
    VP3 = "VP3"
    VP4 = "VP4"
    VP5 = "VP5"


# Advertised per-chunk bandwidth, for the capacity table.
METHOD_TABLE: dict[MethodId, tuple[str, str]] = {
    MethodId.I1: ("32", "bits/chunk"),
    MethodId.I2: ("8", "bits/chunk"),
    MethodId.D1: ("16", "bits/chunk"),
    MethodId.D2: ("32", "bits/chunk"),
    MethodId.S1: ("3-4", "bits/chunk"),
    MethodId.S2: ("3-4", "bits/chunk"),
    MethodId.A1: ("1-4", "bits/chunk"),
    MethodId.P1: ("varies", "n/a"),
    MethodId.VP1: ("32/128", "bits/par."),
    MethodId.VP2: ("320", "bits/chunk"),
    MethodId.VP3: ("32", "bits/chunk"),
    MethodId.VP4: ("32", "bits/par."),
    MethodId.VP5: ("varies", "n/a"),
}


@dataclass(frozen=True)
class MethodConfig:
    """Shared secret between embedder and extractor.

    The defaults keep the detectability-motivated limits: I1 uses only
    the low 8 of the 32 tag bits, I2 the high 8 stream-count bits, S1
    three window bits, and S2 offsets its fabricated duplicates within
    ``duplicate_window`` of the cumulative ack.
    """

    i1_bits: int = 8
    i2_bits: int = 8
    s1_bits: int = 3
    s2_bits: int = 4
    duplicate_window: int = 16
    shared_key_count: int = 16
    vp2_info_len: int = 40
    vp1_protect: tuple[bytes, ...] = ()

    def __post_init__(self) -> None:
        checks = [
            (1 <= self.i1_bits <= 32, "i1_bits must be in 1..32"),
            (1 <= self.i2_bits <= 8, "i2_bits must be in 1..8"),
            (1 <= self.s1_bits <= 4, "s1_bits must be in 1..4"),
            (1 <= self.s2_bits <= 4, "s2_bits must be in 1..4"),
            (
                (1 << self.s2_bits) <= self.duplicate_window,
                "duplicate_window must cover 2**s2_bits offsets",
            ),
            (self.shared_key_count >= 1, "shared_key_count must be >= 1"),
            (self.vp2_info_len >= 1, "vp2_info_len must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def a1_bits(self) -> int:
        return int(math.floor(math.log2(self.shared_key_count))) if self.shared_key_count > 1 else 0


DEFAULT_CONFIG = MethodConfig()


# ---------------------------------------------------------------------------
# bit splicing helpers


def _write_field(value: int, width: int, region_msb: int, bits: Bits) -> int:
    """Splice ``bits`` into ``value`` starting at bit ``region_msb`` downward."""
    for i, bit in enumerate(bits):
        pos = region_msb - i
        value = (value | (1 << pos)) if bit else (value & ~(1 << pos))
    return value & ((1 << width) - 1)

def _read_field(value: int, region_msb: int, region_width: int) -> Bits:
    return Bits((value >> (region_msb - i)) & 1 for i in range(region_width))


def _write_bytes(buf: bytes, bits: Bits) -> bytes:
    out = bytearray(buf)
    for i, bit in enumerate(bits):
        byte, shift = divmod(i, 8)
        if bit:
            out[byte] |= 0x80 >> shift
        else:
            out[byte] &= ~(0x80 >> shift) & 0xFF
    return bytes(out)


def _read_bytes(buf: bytes, nbits: int) -> Bits:
    return Bits.from_bytes(buf)[:nbits]


# ---------------------------------------------------------------------------
# carrier plumbing
#
# A carrier is one embeddable field region. ``write`` takes at most
# ``capacity`` bits and mutates the (already copied) packet; ``read``
# returns the full region.


@dataclass
class _Carrier:
    capacity: int
    write: object  # callable(Bits) -> None
    read: object  # callable() -> Bits


def _int_field_carrier(obj, attr: str, width: int, region_msb: int, region_width: int, fixup=None) -> _Carrier:
    def write(bits: Bits) -> None:
        value = _write_field(getattr(obj, attr), width, region_msb, bits)
        if fixup is not None:
            value = fixup(value)
        setattr(obj, attr, value)

    def read() -> Bits:
        return _read_field(getattr(obj, attr), region_msb, region_width)

    return _Carrier(region_width, write, read)


def _bytes_carrier(owner, attr: str, nbits: int) -> _Carrier:
    def write(bits: Bits) -> None:
        setattr(owner, attr, _write_bytes(getattr(owner, attr), bits))

    def read() -> Bits:
        return _read_bytes(getattr(owner, attr), nbits)

    return _Carrier(nbits, write, read)


def _i1_fixup(tag: int) -> int:
    # The initiate tag must stay nonzero; flip the highest non-mask bit
    # (the extractor only reads the masked low bits).
    return tag if tag else 1 << 31


def _i2_fixup(streams: int) -> int:
    return streams if streams else 1


def _iter_carriers(method: MethodId, cfg: MethodConfig, pkt: SctpPacket) -> list[_Carrier]:
    found: list[_Carrier] = []
    for chunk in pkt.chunks:
        if method == MethodId.I1 and chunk.type in (ChunkType.INIT, ChunkType.INIT_ACK):
            found.append(
                _int_field_carrier(chunk.body, "initiate_tag", 32, cfg.i1_bits - 1, cfg.i1_bits, _i1_fixup)
            )
        elif method == MethodId.I2 and chunk.type in (ChunkType.INIT, ChunkType.INIT_ACK):
            found.append(
                _int_field_carrier(chunk.body, "inbound_streams", 16, 15, cfg.i2_bits, _i2_fixup)
            )
        elif method == MethodId.D1 and chunk.type == ChunkType.DATA and chunk.unordered:
            found.append(_int_field_carrier(chunk.body, "ssn", 16, 15, 16))
        elif method == MethodId.D2 and chunk.type == ChunkType.DATA:
            found.append(_int_field_carrier(chunk.body, "ppid", 32, 31, 32))
        elif method == MethodId.S1 and chunk.type == ChunkType.SACK:
            found.append(
                _int_field_carrier(chunk.body, "a_rwnd", 32, cfg.s1_bits - 1, cfg.s1_bits)
            )
        elif method == MethodId.S2 and chunk.type == ChunkType.SACK:
            found.append(_s2_carrier(cfg, chunk.body))
        elif method == MethodId.A1 and chunk.type == ChunkType.AUTH:
            if cfg.a1_bits:
                found.append(_a1_carrier(cfg, chunk.body))
        elif method == MethodId.P1 and chunk.type == ChunkType.PAD:
            found.append(_bytes_carrier(chunk, "value", 8 * len(chunk.value)))
        elif method == MethodId.VP1 and chunk.type in (ChunkType.INIT, ChunkType.INIT_ACK, ChunkType.ASCONF):
            for param in chunk.params:
                if param.type in (ParamType.IPV4_ADDRESS, ParamType.IPV6_ADDRESS):
                    if param.value in cfg.vp1_protect:
                        continue
                    found.append(_bytes_carrier(param, "value", 8 * len(param.value)))
        elif method == MethodId.VP2 and chunk.type == ChunkType.HEARTBEAT:
            for param in chunk.find_params(ParamType.HEARTBEAT_INFO):
                found.append(_bytes_carrier(param, "value", 8 * len(param.value)))
        elif method == MethodId.VP3 and chunk.type in (ChunkType.INIT, ChunkType.INIT_ACK):
            for param in chunk.find_params(ParamType.RANDOM):
                found.append(_bytes_carrier(param, "value", min(32, 8 * len(param.value))))
        elif method == MethodId.VP4 and chunk.type == ChunkType.ASCONF:
            for param in chunk.params:
                if param.type in (ParamType.ADD_IP, ParamType.DELETE_IP, ParamType.SET_PRIMARY):
                    if len(param.value) >= 4:
                        found.append(_correlation_id_carrier(param))
        elif method == MethodId.VP5 and chunk.type == ChunkType.INIT:
            for param in chunk.find_params(ParamType.PADDING):
                found.append(_bytes_carrier(param, "value", 8 * len(param.value)))
    return found


def _s2_carrier(cfg: MethodConfig, body: SackBody) -> _Carrier:
    k = cfg.s2_bits

    def write(bits: Bits) -> None:
        # A short final symbol occupies the leading bit positions.
        value = bits.to_int() << (k - len(bits))
        body.dup_tsns.append((body.cum_tsn_ack - 1 - value) & 0xFFFFFFFF)

    def read() -> Bits:
        if not body.dup_tsns:
            return Bits()
        value = (body.cum_tsn_ack - 1 - body.dup_tsns[-1]) & 0xFFFFFFFF
        if value >= (1 << k):
            return Bits()
        return Bits.from_int(value, k)

    return _Carrier(k, write, read)


def _a1_carrier(cfg: MethodConfig, body: AuthBody) -> _Carrier:
    k = cfg.a1_bits

    def write(bits: Bits) -> None:
        body.shared_key_id = bits.to_int() << (k - len(bits))

    def read() -> Bits:
        return Bits.from_int(body.shared_key_id & ((1 << k) - 1), k)

    return _Carrier(k, write, read)


def _correlation_id_carrier(param: Parameter) -> _Carrier:
    def write(bits: Bits) -> None:
        current = int.from_bytes(param.value[:4], "big")
        new = _write_field(current, 32, 31, bits)
        param.value = new.to_bytes(4, "big") + param.value[4:]

    def read() -> Bits:
        return Bits.from_int(int.from_bytes(param.value[:4], "big"), 32)

    return _Carrier(32, write, read)


# ---------------------------------------------------------------------------
# public interface


def capacity(method: MethodId, cfg: MethodConfig, carrier: Chunk | Parameter) -> int:
    """Embeddable bit count of one chunk or parameter under ``method``."""
    if isinstance(carrier, Parameter):
        pkt = _wrap_param(method, carrier)
        if pkt is None:
            raise CarrierMismatch(f"{method.value} does not embed into parameters")
    elif isinstance(carrier, Chunk):
        pkt = SctpPacket(0, 0, 0, [carrier])
    else:
        raise CarrierMismatch(f"unsupported carrier type {type(carrier).__name__}")
    found = _iter_carriers(method, cfg, pkt)
    if not found:
        raise CarrierMismatch(f"carrier is not usable by method {method.value}")
    return sum(c.capacity for c in found)


def _wrap_param(method: MethodId, param: Parameter) -> SctpPacket | None:
    """Host a bare parameter in the chunk type its method expects."""
    hosts = {
        MethodId.VP1: ChunkType.INIT,
        MethodId.VP2: ChunkType.HEARTBEAT,
        MethodId.VP3: ChunkType.INIT,
        MethodId.VP4: ChunkType.ASCONF,
        MethodId.VP5: ChunkType.INIT,
    }
    if method not in hosts:
        return None
    ctype = hosts[method]
    if ctype == ChunkType.INIT:
        chunk = Chunk(ctype, 0, InitBody(1, 0, 1, 1, 0), [param])
    elif ctype == ChunkType.ASCONF:
        chunk = Chunk(ctype, 0, AsconfBody(0), [param])
    else:
        chunk = Chunk(ctype, 0, None, [param])
    return SctpPacket(0, 0, 0, [chunk])


def packet_capacity(method: MethodId, cfg: MethodConfig, pkt: SctpPacket) -> int:
    """Total embeddable bits across every carrier in ``pkt`` (0 if none)."""
    return sum(c.capacity for c in _iter_carriers(method, cfg, pkt))


def embed(
    method: MethodId, cfg: MethodConfig, pkt: SctpPacket, payload: Bits
) -> tuple[SctpPacket, int]:
    """Hide a prefix of ``payload`` in ``pkt``.

    Returns the modified copy and the number of consumed bits. Carriers
    are filled in chunk order; the checksum is recomputed. Raises
    :class:`NoCarrier` when the packet has no suitable chunk and
    :class:`CapacityZero` when carriers exist but hold no bits.
    """
    if not payload:
        raise ValueError("payload must contain at least one bit")
    out = copy.deepcopy(pkt)
    carriers = _iter_carriers(method, cfg, out)
    if not carriers:
        raise NoCarrier(f"packet has no carrier for method {method.value}")
    if sum(c.capacity for c in carriers) == 0:
        raise CapacityZero(f"carriers for {method.value} hold zero bits")
    consumed = 0
    for carrier in carriers:
        if consumed >= len(payload) or carrier.capacity == 0:
            continue
        take = min(carrier.capacity, len(payload) - consumed)
        carrier.write(payload[consumed : consumed + take])
        consumed += take
    out.checksum = compute_checksum(serialize_packet(out, recompute_checksum=False))
    out.checksum_ok = True
    return out, consumed


def extract(method: MethodId, cfg: MethodConfig, pkt: SctpPacket) -> Bits:
    """Read every carrier bit region of ``pkt``, in embed order."""
    carriers = _iter_carriers(method, cfg, pkt)
    if not carriers:
        raise NoCarrier(f"packet has no carrier for method {method.value}")
    return Bits.join(c.read() for c in carriers)
