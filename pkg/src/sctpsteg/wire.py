"""Bit-exact SCTP packet, chunk, and parameter codec.

Wire layout (all multi-byte integers big-endian, except the checksum,
which SCTP transmits little-endian):

* common header: source port (2), destination port (2), verification
  tag (4), CRC-32C checksum (4);
* each chunk: type (1), flags (1), length (2), value, padded to a
  4-byte boundary;
* each variable parameter: type (2), length (2), value, padded to a
  4-byte boundary (length excludes padding).

Chunk and parameter types the rest of the package operates on are
decoded into typed bodies; everything else is preserved opaquely
(type, flags, raw value) so unknown traffic survives re-serialization
byte for byte. The canonical serializer counts inter-parameter padding
inside the chunk length; the parser also accepts the stricter form
that excludes trailing padding.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from ipaddress import ip_address

from .crc32c import crc32c

COMMON_HEADER_LEN = 12

# Type codes in one place for auditability. Core codes are from the base
# protocol standard; PAD, FORWARD_TSN, ASCONF and ASCONF_ACK come from the
# padding, partial-reliability, and dynamic-address-reconfiguration
# extensions respectively.
class ChunkType(IntEnum):
    DATA = 0
    INIT = 1
    INIT_ACK = 2
    SACK = 3
    HEARTBEAT = 4
    HEARTBEAT_ACK = 5
    COOKIE_ECHO = 10
    COOKIE_ACK = 11
    AUTH = 15
    ASCONF_ACK = 0x80
    PAD = 0x84
    FORWARD_TSN = 0xC0
    ASCONF = 0xC1


class ParamType(IntEnum):
    HEARTBEAT_INFO = 1
    IPV4_ADDRESS = 5
    IPV6_ADDRESS = 6
    STATE_COOKIE = 7
    RANDOM = 0x8002
    PADDING = 0x8005
    ADD_IP = 0xC001
    DELETE_IP = 0xC002
    SET_PRIMARY = 0xC004


# DATA chunk flag bits.
DATA_FLAG_END = 0x01
DATA_FLAG_BEGIN = 0x02
DATA_FLAG_UNORDERED = 0x04

_ASCONF_REQUEST_PARAMS = (ParamType.ADD_IP, ParamType.DELETE_IP, ParamType.SET_PRIMARY)


class SctpCodecError(Exception):
    """Base class for codec failures."""


class TruncatedPacket(SctpCodecError):
    """A length field points past the end of the buffer."""


class MalformedChunk(SctpCodecError):
    """A chunk or parameter violates the framing rules."""


class OversizeChunk(SctpCodecError):
    """A chunk body is too large for the 16-bit length field."""


def _pad4(n: int) -> int:
    return (n + 3) & ~3


@dataclass(slots=True)
class Parameter:
    type: int
    value: bytes = b""

    @property
    def wire_length(self) -> int:
        """Length field value: header plus value, excluding padding."""
        return 4 + len(self.value)


def param_from_ip(addr: str) -> Parameter:
    """Build an IPv4/IPv6 address parameter from a textual address."""
    ip = ip_address(addr)
    ptype = ParamType.IPV4_ADDRESS if ip.version == 4 else ParamType.IPV6_ADDRESS
    return Parameter(ptype, ip.packed)


def ip_from_param(param: Parameter) -> str:
    if param.type == ParamType.IPV4_ADDRESS and len(param.value) == 4:
        return str(ip_address(param.value))
    if param.type == ParamType.IPV6_ADDRESS and len(param.value) == 16:
        return str(ip_address(param.value))
    raise ValueError("parameter does not hold a well-formed address")


@dataclass(slots=True)
class DataBody:
    tsn: int
    stream_id: int
    ssn: int
    ppid: int = 0
    payload: bytes = b""


@dataclass(slots=True)
class InitBody:
    initiate_tag: int
    a_rwnd: int
    outbound_streams: int
    inbound_streams: int
    initial_tsn: int


@dataclass(slots=True)
class SackBody:
    cum_tsn_ack: int
    a_rwnd: int
    gap_blocks: list[tuple[int, int]] = field(default_factory=list)
    dup_tsns: list[int] = field(default_factory=list)


@dataclass(slots=True)
class AuthBody:
    shared_key_id: int = 0
    hmac_id: int = 1
    hmac: bytes = b""


@dataclass(slots=True)
class ForwardTsnBody:
    new_cum_tsn: int
    streams: list[tuple[int, int]] = field(default_factory=list)


@dataclass(slots=True)
class AsconfBody:
    seq: int


# Chunk types whose value may end in a parameter list.
_PARAM_CHUNKS = frozenset(
    {
        ChunkType.INIT,
        ChunkType.INIT_ACK,
        ChunkType.HEARTBEAT,
        ChunkType.HEARTBEAT_ACK,
        ChunkType.ASCONF,
        ChunkType.ASCONF_ACK,
    }
)


@dataclass(slots=True)
class Chunk:
    """One SCTP chunk.

    ``body`` holds the decoded fixed fields for known structured types,
    ``params`` the trailing variable parameters where the type carries
    them, and ``value`` the raw bytes for opaque types (PAD,
    COOKIE_ECHO, and anything unknown).
    """

    type: int
    flags: int = 0
    body: object = None
    params: list[Parameter] = field(default_factory=list)
    value: bytes = b""

    @property
    def unordered(self) -> bool:
        return self.type == ChunkType.DATA and bool(self.flags & DATA_FLAG_UNORDERED)

    def find_params(self, ptype: int) -> list[Parameter]:
        return [p for p in self.params if p.type == ptype]


@dataclass(slots=True)
class SctpPacket:
    src_port: int
    dst_port: int
    verification_tag: int
    chunks: list[Chunk] = field(default_factory=list)
    # The checksum is derived state; it never participates in equality.
    checksum: int = field(default=0, compare=False)
    checksum_ok: bool = field(default=True, compare=False)

    def find_chunks(self, ctype: int) -> list[Chunk]:
        return [c for c in self.chunks if c.type == ctype]

    def serialize(self, recompute_checksum: bool = True) -> bytes:
        return serialize_packet(self, recompute_checksum=recompute_checksum)

    @classmethod
    def parse(cls, data: bytes) -> "SctpPacket":
        return parse_packet(data)


# ---------------------------------------------------------------------------
# parameter codec


def _encode_params(params: list[Parameter]) -> bytes:
    out = bytearray()
    for p in params:
        if p.wire_length > 0xFFFF:
            raise OversizeChunk(f"parameter value of {len(p.value)} bytes too large")
        out += struct.pack("!HH", p.type, p.wire_length)
        out += p.value
        out += b"\x00" * (_pad4(p.wire_length) - p.wire_length)
    return bytes(out)


def _decode_params(data: bytes) -> list[Parameter]:
    params = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < 4:
            raise MalformedChunk("trailing parameter bytes shorter than a header")
        ptype, plen = struct.unpack_from("!HH", data, pos)
        if plen < 4:
            raise MalformedChunk(f"parameter length {plen} below minimum")
        end = pos + plen
        if end > len(data):
            raise TruncatedPacket("parameter length exceeds chunk value")
        params.append(Parameter(ptype, data[pos + 4 : end]))
        pos = min(pos + _pad4(plen), len(data))
    return params


# ---------------------------------------------------------------------------
# chunk codec


def _encode_chunk_value(chunk: Chunk) -> bytes:
    t = chunk.type
    body = chunk.body
    if t == ChunkType.DATA:
        if not isinstance(body, DataBody):
            raise MalformedChunk("DATA chunk requires a DataBody")
        return (
            struct.pack("!IHHI", body.tsn, body.stream_id, body.ssn, body.ppid)
            + body.payload
        )
    if t in (ChunkType.INIT, ChunkType.INIT_ACK):
        if not isinstance(body, InitBody):
            raise MalformedChunk("INIT chunk requires an InitBody")
        fixed = struct.pack(
            "!IIHHI",
            body.initiate_tag,
            body.a_rwnd,
            body.outbound_streams,
            body.inbound_streams,
            body.initial_tsn,
        )
        return fixed + _encode_params(chunk.params)
    if t == ChunkType.SACK:
        if not isinstance(body, SackBody):
            raise MalformedChunk("SACK chunk requires a SackBody")
        out = bytearray(
            struct.pack(
                "!IIHH",
                body.cum_tsn_ack,
                body.a_rwnd,
                len(body.gap_blocks),
                len(body.dup_tsns),
            )
        )
        for start, end in body.gap_blocks:
            out += struct.pack("!HH", start, end)
        for tsn in body.dup_tsns:
            out += struct.pack("!I", tsn)
        return bytes(out)
    if t == ChunkType.AUTH:
        if not isinstance(body, AuthBody):
            raise MalformedChunk("AUTH chunk requires an AuthBody")
        return struct.pack("!HH", body.shared_key_id, body.hmac_id) + body.hmac
    if t == ChunkType.FORWARD_TSN:
        if not isinstance(body, ForwardTsnBody):
            raise MalformedChunk("FORWARD_TSN chunk requires a ForwardTsnBody")
        out = bytearray(struct.pack("!I", body.new_cum_tsn))
        for sid, ssn in body.streams:
            out += struct.pack("!HH", sid, ssn)
        return bytes(out)
    if t in (ChunkType.ASCONF, ChunkType.ASCONF_ACK):
        if not isinstance(body, AsconfBody):
            raise MalformedChunk("ASCONF chunk requires an AsconfBody")
        return struct.pack("!I", body.seq) + _encode_params(chunk.params)
    if t in (ChunkType.HEARTBEAT, ChunkType.HEARTBEAT_ACK):
        return _encode_params(chunk.params)
    # COOKIE_ECHO, COOKIE_ACK, PAD, and unknown types carry raw bytes.
    return chunk.value


def _decode_chunk(ctype: int, flags: int, value: bytes) -> Chunk:
    if ctype == ChunkType.DATA:
        if len(value) < 12:
            raise MalformedChunk("DATA chunk shorter than its fixed fields")
        tsn, sid, ssn, ppid = struct.unpack_from("!IHHI", value)
        return Chunk(ctype, flags, DataBody(tsn, sid, ssn, ppid, value[12:]))
    if ctype in (ChunkType.INIT, ChunkType.INIT_ACK):
        if len(value) < 16:
            raise MalformedChunk("INIT chunk shorter than its fixed fields")
        tag, rwnd, outs, ins, itsn = struct.unpack_from("!IIHHI", value)
        return Chunk(
            ctype,
            flags,
            InitBody(tag, rwnd, outs, ins, itsn),
            _decode_params(value[16:]),
        )
    if ctype == ChunkType.SACK:
        if len(value) < 12:
            raise MalformedChunk("SACK chunk shorter than its fixed fields")
        cum, rwnd, ngaps, ndups = struct.unpack_from("!IIHH", value)
        need = 12 + 4 * ngaps + 4 * ndups
        if len(value) < need:
            raise MalformedChunk("SACK gap/duplicate counts exceed chunk value")
        gaps = [
            struct.unpack_from("!HH", value, 12 + 4 * i) for i in range(ngaps)
        ]
        dups = [
            struct.unpack_from("!I", value, 12 + 4 * ngaps + 4 * i)[0]
            for i in range(ndups)
        ]
        return Chunk(ctype, flags, SackBody(cum, rwnd, [tuple(g) for g in gaps], dups))
    if ctype == ChunkType.AUTH:
        if len(value) < 4:
            raise MalformedChunk("AUTH chunk shorter than its fixed fields")
        key_id, hmac_id = struct.unpack_from("!HH", value)
        return Chunk(ctype, flags, AuthBody(key_id, hmac_id, value[4:]))
    if ctype == ChunkType.FORWARD_TSN:
        if len(value) < 4 or (len(value) - 4) % 4:
            raise MalformedChunk("FORWARD_TSN value length invalid")
        new_cum = struct.unpack_from("!I", value)[0]
        streams = [
            struct.unpack_from("!HH", value, 4 + 4 * i)
            for i in range((len(value) - 4) // 4)
        ]
        return Chunk(ctype, flags, ForwardTsnBody(new_cum, [tuple(s) for s in streams]))
    if ctype in (ChunkType.ASCONF, ChunkType.ASCONF_ACK):
        if len(value) < 4:
            raise MalformedChunk("ASCONF chunk shorter than its sequence number")
        seq = struct.unpack_from("!I", value)[0]
        return Chunk(ctype, flags, AsconfBody(seq), _decode_params(value[4:]))
    if ctype in (ChunkType.HEARTBEAT, ChunkType.HEARTBEAT_ACK):
        return Chunk(ctype, flags, None, _decode_params(value))
    return Chunk(ctype, flags, value=value)


# ---------------------------------------------------------------------------
# packet codec


def compute_checksum(packet_bytes: bytes) -> int:
    """CRC-32C over the packet with the checksum field taken as zero."""
    return crc32c(packet_bytes[:8] + b"\x00\x00\x00\x00" + packet_bytes[12:])


def serialize_packet(pkt: SctpPacket, recompute_checksum: bool = True) -> bytes:
    """Emit canonical wire bytes.

    With ``recompute_checksum=False`` the stored checksum value is
    written unchanged (checksum passthrough, used when a middlebox
    wants to forward deliberately broken packets).
    """
    out = bytearray(struct.pack("!HHI", pkt.src_port, pkt.dst_port, pkt.verification_tag))
    out += b"\x00\x00\x00\x00"
    for chunk in pkt.chunks:
        value = _encode_chunk_value(chunk)
        length = 4 + len(value)
        if length > 0xFFFF:
            raise OversizeChunk(f"chunk value of {len(value)} bytes too large")
        out += struct.pack("!BBH", chunk.type & 0xFF, chunk.flags & 0xFF, length)
        out += value
        out += b"\x00" * (_pad4(length) - length)
    checksum = compute_checksum(bytes(out)) if recompute_checksum else pkt.checksum
    if recompute_checksum:
        pkt.checksum = checksum
        pkt.checksum_ok = True
    out[8:12] = checksum.to_bytes(4, "little")
    return bytes(out)


def parse_packet(data: bytes) -> SctpPacket:
    """Parse wire bytes into a structured packet.

    A bad checksum does not abort the parse; it is reported through
    ``checksum_ok`` so analysis tools can still inspect the packet.
    """
    if len(data) < COMMON_HEADER_LEN:
        raise TruncatedPacket(f"packet of {len(data)} bytes lacks a common header")
    src, dst, vtag = struct.unpack_from("!HHI", data)
    stored = int.from_bytes(data[8:12], "little")
    chunks = []
    pos = COMMON_HEADER_LEN
    while pos < len(data):
        if len(data) - pos < 4:
            raise MalformedChunk("trailing chunk bytes shorter than a header")
        ctype, flags, length = struct.unpack_from("!BBH", data, pos)
        if length < 4:
            raise MalformedChunk(f"chunk length {length} below minimum")
        end = pos + length
        if end > len(data):
            raise TruncatedPacket("chunk length exceeds packet")
        chunks.append(_decode_chunk(ctype, flags, data[pos + 4 : end]))
        pos = min(pos + _pad4(length), len(data))
    pkt = SctpPacket(src, dst, vtag, chunks, checksum=stored)
    pkt.checksum_ok = stored == compute_checksum(data)
    return pkt
