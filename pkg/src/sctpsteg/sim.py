"""Deterministic two-endpoint SCTP association simulator.

Models the pieces the covert channels and the warden need: the
four-way cookie handshake, multi-streaming with ordered and unordered
delivery, a multi-homed path set with round-robin alternate-path
retransmission, seeded per-packet loss, SACK generation with gap and
duplicate reports, and partial-reliability FORWARD_TSN processing.

The simulation is a discrete event loop with microsecond timestamps.
Every random draw comes from seeded generators, so one seed and one
scenario always produce the same trace, byte for byte. The trace is a
sender-side tap: every transmitted packet is recorded, including
packets that are then lost in transit.

Covert drivers steer the simulator through hooks rather than
subclassing: ``outbound_transform`` rewrites freshly built packets
(content embedding), ``retrans_path_hook`` picks the retransmission
path (multi-homing channel), and ``skip_policy`` plus
``late_payload_provider`` implement withhold-then-send-late delivery
(partial-reliability channel).
"""
from __future__ import annotations

import heapq
import random
import struct
from dataclasses import dataclass, field
from ipaddress import ip_address

from .wire import (
    AsconfBody,
    AuthBody,
    Chunk,
    ChunkType,
    DataBody,
    ForwardTsnBody,
    InitBody,
    Parameter,
    ParamType,
    SackBody,
    SctpPacket,
    ip_from_param,
    param_from_ip,
    serialize_packet,
)


class SimulationError(Exception):
    pass


class HandshakeTimeout(SimulationError):
    """Association establishment exhausted its retry budget."""


class StreamOutOfRange(SimulationError):
    pass


class SimulationStalled(SimulationError):
    """The event loop exceeded its safety limits without finishing."""


@dataclass(frozen=True)
class LossModel:
    """Per-packet, per-path Bernoulli loss.

    ``forced_data_drops`` holds 1-based indices into the stream of
    client-to-server DATA-bearing transmissions; those are dropped
    unconditionally, which lets tests script a specific loss.
    """

    seed: int = 0
    loss_probability: float = 0.0
    forced_data_drops: frozenset[int] = frozenset()


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    addresses: tuple[str, ...]
    port: int

    def __post_init__(self) -> None:
        if not self.addresses:
            raise ValueError("endpoint needs at least one address")
        if len(set(self.addresses)) != len(self.addresses):
            raise ValueError("endpoint addresses must be distinct")

    @property
    def primary(self) -> str:
        return self.addresses[0]

    @property
    def alternates(self) -> tuple[str, ...]:
        """Alternate addresses, sorted ascending by numeric value."""
        return tuple(sorted(self.addresses[1:], key=ip_address))


@dataclass(frozen=True)
class StreamPlan:
    count: int = 4
    ordered: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("stream count must be >= 1")


@dataclass(frozen=True)
class PathPlan:
    primary: tuple[str, str]
    alternates_src: tuple[str, ...]
    alternates_dst: tuple[str, ...]

    @property
    def grid(self) -> tuple[tuple[str, str], ...]:
        """All alternate (src, dst) pairs, lexicographic by address value."""
        return tuple(
            (s, d) for s in self.alternates_src for d in self.alternates_dst
        )


@dataclass(slots=True)
class CaptureRecord:
    ts_us: int
    direction: str  # "ab" or "ba"
    src: str
    dst: str
    raw: bytes

    def packet(self) -> SctpPacket:
        from .wire import parse_packet

        return parse_packet(self.raw)


PHASE_CLOSED = "CLOSED"
PHASE_COOKIE_WAIT = "COOKIE_WAIT"
PHASE_COOKIE_ECHOED = "COOKIE_ECHOED"
PHASE_ESTABLISHED = "ESTABLISHED"


@dataclass
class _InFlight:
    chunks: list[Chunk]
    payload_len: int
    sent_at: int
    attempts: int = 1
    miss_reports: int = 0
    generation: int = 0
    path_pair: tuple[str, str] | None = None


@dataclass
class AssociationState:
    phase: str = PHASE_CLOSED
    local_tag: int = 0
    peer_vtag: int = 0
    next_tsn: int = 0
    initial_tsn: int = 0
    next_ssn: dict[int, int] = field(default_factory=dict)
    # sender side
    in_flight: dict[int, _InFlight] = field(default_factory=dict)
    snd_cum_acked: int = 0
    # receiver side
    rcv_cum: int = 0
    rcv_seen: set[int] = field(default_factory=set)
    dup_pending: list[int] = field(default_factory=list)
    ft_floor: int = 0
    expected_ssn: dict[int, int] = field(default_factory=dict)
    reorder: dict[int, dict[int, bytes]] = field(default_factory=dict)
    buffered_bytes: int = 0
    delivered: list[tuple[int, bytes, int]] = field(default_factory=list)  # (sid, payload, ts)
    covert_tap: list[tuple[int, bytes]] = field(default_factory=list)
    covert_tapped: set[int] = field(default_factory=set)
    ft_log: list[str] = field(default_factory=list)
    peer_declared_addrs: list[str] = field(default_factory=list)


def tsn_after(a: int, b: int) -> bool:
    """True when TSN ``a`` follows ``b`` in modulo-2^32 space."""
    return ((a - b) & 0xFFFFFFFF) < 0x80000000 and a != b


def process_forward_tsn(state: AssociationState, body: ForwardTsnBody) -> bool:
    """Advance the receive state past abandoned TSNs.

    Returns True when the cumulative point moved. A stale value (at or
    below the current cumulative ack) is ignored and logged.
    """
    if not tsn_after(body.new_cum_tsn, state.rcv_cum):
        state.ft_log.append(
            f"stale forward-tsn {body.new_cum_tsn} at cum {state.rcv_cum}"
        )
        return False
    cum = body.new_cum_tsn
    state.rcv_seen = {t for t in state.rcv_seen if tsn_after(t, cum)}
    while (cum + 1) & 0xFFFFFFFF in state.rcv_seen:
        cum = (cum + 1) & 0xFFFFFFFF
        state.rcv_seen.discard(cum)
    state.rcv_cum = cum
    state.ft_floor = max(state.ft_floor, body.new_cum_tsn)
    for sid, ssn in body.streams:
        nxt = (ssn + 1) & 0xFFFF
        if state.expected_ssn.get(sid, 0) < nxt:
            state.expected_ssn[sid] = nxt
    return True


class Endpoint:
    def __init__(self, cfg: EndpointConfig) -> None:
        self.cfg = cfg
        self.state = AssociationState()
        self.retrans_rr = 0
        self.asconf_seq = 0
        self.correlation_counter = 0

    @property
    def name(self) -> str:
        return self.cfg.name


# default timing constants
DEFAULT_PPS = 250.0
DEFAULT_PROP_DELAY_US = 10_000
DEFAULT_RTO_US = 200_000
FAST_RETRANSMIT_REPORTS = 3
HB_INFO_LEN = 40
A_RWND_BASE = 131_072


class Simulation:
    """One association between a client ``a`` and a server ``b``."""

    def __init__(
        self,
        a: EndpointConfig,
        b: EndpointConfig,
        *,
        loss: LossModel = LossModel(),
        pps: float = DEFAULT_PPS,
        streams: int = 4,
        seed: int = 0,
        prop_delay_us: int = DEFAULT_PROP_DELAY_US,
        rto_us: int = DEFAULT_RTO_US,
        max_handshake_retries: int = 8,
        auth_chunks: bool = False,
        init_pad_len: int = 0,
        init_padding_param_len: int = 0,
        hb_info_len: int = HB_INFO_LEN,
        max_retransmit_attempts: int = 1000,
    ) -> None:
        self.a = Endpoint(a)
        self.b = Endpoint(b)
        self.loss = loss
        self.pps = float(pps)
        self.period_us = max(1, int(round(1_000_000 / self.pps)))
        self.streams = streams
        self.prop_delay_us = prop_delay_us
        self.rto_us = rto_us
        self.max_handshake_retries = max_handshake_retries
        self.auth_chunks = auth_chunks
        self.init_pad_len = init_pad_len
        self.init_padding_param_len = init_padding_param_len
        self.hb_info_len = hb_info_len
        self.max_retransmit_attempts = max_retransmit_attempts

        self.now = 0
        self._events: list[tuple[int, int, object]] = []
        self._event_seq = 0
        self.trace: list[CaptureRecord] = []
        self._next_data_slot = 0
        self._ab_data_transmissions = 0

        master = random.Random(seed)
        self._tag_rng = random.Random(master.getrandbits(64))
        self._cookie_rng = random.Random(master.getrandbits(64))
        self._loss_rng = random.Random(loss.seed)

        # covert / warden hooks
        self.outbound_transform = None
        self.retrans_path_hook = None
        self.skip_policy = None
        self.late_payload_provider = None
        self.in_path_normalizer = None

        # hybrid bookkeeping: tsn -> dict(sid, ssn, orig_len, stage)
        self._pending_skips: dict[int, dict] = {}
        self.skipped_tsns: list[int] = []

        self._handshake_failed = False
        self._init_ack_pkt: SctpPacket | None = None
        self._cookie_pkt: SctpPacket | None = None
        self._cookie_attempts = 0
        self._init_attempts = 0
        self._issued_cookie = b""

    # ------------------------------------------------------------------
    # path plumbing

    @property
    def path_plan(self) -> PathPlan:
        return PathPlan(
            (self.a.cfg.primary, self.b.cfg.primary),
            self.a.cfg.alternates,
            self.b.cfg.alternates,
        )

    def _primary_pair(self, sender: Endpoint) -> tuple[str, str]:
        if sender is self.a:
            return (self.a.cfg.primary, self.b.cfg.primary)
        return (self.b.cfg.primary, self.a.cfg.primary)

    def _alt_grid(self, sender: Endpoint) -> tuple[tuple[str, str], ...]:
        if sender is self.a:
            return self.path_plan.grid
        return tuple(
            (s, d)
            for s in self.b.cfg.alternates
            for d in self.a.cfg.alternates
        )

    def _retrans_pair(self, sender: Endpoint, tsn: int) -> tuple[str, str]:
        grid = self._alt_grid(sender)
        default = self._primary_pair(sender)
        if grid:
            default = grid[sender.retrans_rr % len(grid)]
            sender.retrans_rr += 1
        if sender is self.a and self.retrans_path_hook is not None:
            return self.retrans_path_hook(tsn, default)
        return default

    # ------------------------------------------------------------------
    # event loop

    def _schedule(self, at_us: int, fn) -> None:
        self._event_seq += 1
        heapq.heappush(self._events, (max(at_us, self.now), self._event_seq, fn))

    def run(self, max_events: int = 5_000_000) -> None:
        count = 0
        while self._events:
            count += 1
            if count > max_events:
                raise SimulationStalled(f"event budget of {max_events} exceeded")
            t, _, fn = heapq.heappop(self._events)
            self.now = t
            fn()

    # ------------------------------------------------------------------
    # transmission

    def _peer(self, ep: Endpoint) -> Endpoint:
        return self.b if ep is self.a else self.a

    def _transmit(
        self,
        sender: Endpoint,
        pkt: SctpPacket,
        pair: tuple[str, str],
        *,
        transform: bool = True,
        is_data: bool = False,
    ) -> SctpPacket:
        """Record and (loss permitting) deliver one packet.

        Returns the packet that actually went out, post-transform, so
        callers can stash it for byte-identical retransmission.
        """
        if transform and self.outbound_transform is not None:
            replacement = self.outbound_transform(sender.name, pkt)
            if replacement is not None:
                pkt = replacement
                self._adopt_transformed(sender, pkt)
        raw = serialize_packet(pkt)
        direction = "ab" if sender is self.a else "ba"
        record = CaptureRecord(self.now, direction, pair[0], pair[1], raw)
        if self.in_path_normalizer is not None:
            record = self.in_path_normalizer(record)
            if record is None:
                return pkt
            pkt = record.packet()
            pair = (record.src, record.dst)
        self.trace.append(record)

        dropped = False
        if is_data and sender is self.a:
            self._ab_data_transmissions += 1
            if self._ab_data_transmissions in self.loss.forced_data_drops:
                dropped = True
        if not dropped and self.loss.loss_probability > 0:
            dropped = self._loss_rng.random() < self.loss.loss_probability
        if not dropped:
            receiver = self._peer(sender)
            arrive_at = self.now + self.prop_delay_us
            self._schedule(arrive_at, lambda: self._receive(receiver, pkt, pair))
        return pkt

    def _adopt_transformed(self, sender: Endpoint, pkt: SctpPacket) -> None:
        # If content embedding rewrote our initiate tag, the endpoint has
        # to live with the new tag or it would reject the peer's replies.
        for chunk in pkt.chunks:
            if chunk.type in (ChunkType.INIT, ChunkType.INIT_ACK) and isinstance(
                chunk.body, InitBody
            ):
                sender.state.local_tag = chunk.body.initiate_tag

    # ------------------------------------------------------------------
    # handshake

    def _address_params(self, ep: Endpoint) -> list[Parameter]:
        params = [param_from_ip(addr) for addr in ep.cfg.addresses]
        params.append(
            Parameter(ParamType.RANDOM, struct.pack("!I", self._tag_rng.getrandbits(32)))
        )
        return params

    def _build_init_packet(self, ep: Endpoint) -> SctpPacket:
        st = ep.state
        st.local_tag = self._tag_rng.getrandbits(32) or 1
        st.initial_tsn = self._tag_rng.getrandbits(31)
        st.next_tsn = st.initial_tsn + 1
        st.snd_cum_acked = st.initial_tsn
        params = self._address_params(ep)
        if self.init_padding_param_len:
            params.append(
                Parameter(ParamType.PADDING, bytes(self.init_padding_param_len))
            )
        init = Chunk(
            ChunkType.INIT,
            0,
            InitBody(
                st.local_tag,
                A_RWND_BASE,
                self.streams,
                _pow2_ceil(self.streams),
                st.initial_tsn,
            ),
            params,
        )
        chunks = [init]
        if self.init_pad_len:
            chunks.append(Chunk(ChunkType.PAD, 0, value=bytes(self.init_pad_len)))
        return SctpPacket(ep.cfg.port, self._peer(ep).cfg.port, 0, chunks)

    def establish(self) -> list[CaptureRecord]:
        """Run the four-way handshake; returns the new trace records."""
        if self.a.state.phase != PHASE_CLOSED or self.b.state.phase != PHASE_CLOSED:
            raise SimulationError("both endpoints must be CLOSED")
        start = len(self.trace)
        self._handshake_failed = False
        init_pkt = self._build_init_packet(self.a)
        self.a.state.phase = PHASE_COOKIE_WAIT
        self._init_attempts = 0
        self._init_ack_pkt: SctpPacket | None = None
        self._cookie_pkt: SctpPacket | None = None
        self._cookie_attempts = 0
        self._issued_cookie = b""

        def send_init() -> None:
            if self.a.state.phase != PHASE_COOKIE_WAIT:
                return
            self._init_attempts += 1
            if self._init_attempts > self.max_handshake_retries:
                self._handshake_failed = True
                return
            sent = self._transmit(
                self.a, init_pkt, self._primary_pair(self.a), transform=self._init_attempts == 1
            )
            if self._init_attempts == 1:
                # keep the transformed packet for byte-identical retries
                init_pkt.chunks = sent.chunks
                init_pkt.verification_tag = sent.verification_tag
            self._schedule(self.now + self.rto_us, send_init)

        send_init()
        self.run()
        if (
            self._handshake_failed
            or self.a.state.phase != PHASE_ESTABLISHED
            or self.b.state.phase != PHASE_ESTABLISHED
        ):
            raise HandshakeTimeout(
                f"handshake failed after {self._init_attempts} INIT attempts"
            )
        return self.trace[start:]

    # ------------------------------------------------------------------
    # receive dispatch

    def _receive(self, ep: Endpoint, pkt: SctpPacket, pair: tuple[str, str]) -> None:
        if pair[1] not in ep.cfg.addresses:
            return  # addressed to a host that does not exist here
        st = ep.state
        has_init = any(c.type == ChunkType.INIT for c in pkt.chunks)
        if not has_init and st.local_tag and pkt.verification_tag != st.local_tag:
            return  # bad verification tag
        sack_needed = False
        for chunk in pkt.chunks:
            if chunk.type == ChunkType.INIT:
                self._on_init(ep, chunk, pkt)
            elif chunk.type == ChunkType.INIT_ACK:
                self._on_init_ack(ep, chunk)
            elif chunk.type == ChunkType.COOKIE_ECHO:
                self._on_cookie_echo(ep, chunk)
            elif chunk.type == ChunkType.COOKIE_ACK:
                if st.phase == PHASE_COOKIE_ECHOED:
                    st.phase = PHASE_ESTABLISHED
            elif chunk.type == ChunkType.DATA:
                self._on_data(ep, chunk)
                sack_needed = True
            elif chunk.type == ChunkType.SACK:
                self._on_sack(ep, chunk.body)
            elif chunk.type == ChunkType.FORWARD_TSN:
                process_forward_tsn(st, chunk.body)
                sack_needed = True
            elif chunk.type == ChunkType.HEARTBEAT:
                self._on_heartbeat(ep, chunk, pair)
            elif chunk.type == ChunkType.ASCONF:
                self._on_asconf(ep, chunk)
            # HEARTBEAT_ACK, ASCONF_ACK, AUTH: nothing to act on here.
        if sack_needed:
            self._send_sack(ep)

    def _on_init(self, ep: Endpoint, chunk: Chunk, pkt: SctpPacket) -> None:
        st = ep.state
        body: InitBody = chunk.body
        st.peer_vtag = body.initiate_tag
        st.rcv_cum = body.initial_tsn
        st.ft_floor = body.initial_tsn
        st.peer_declared_addrs = self._declared_addrs(chunk)
        if self._init_ack_pkt is not None:
            # Retransmitted INIT: answer with the identical INIT_ACK so
            # the already-issued cookie stays valid.
            self._transmit(ep, self._init_ack_pkt, self._primary_pair(ep), transform=False)
            return
        st.local_tag = self._tag_rng.getrandbits(32) or 1
        st.initial_tsn = self._tag_rng.getrandbits(31)
        st.next_tsn = st.initial_tsn + 1
        st.snd_cum_acked = st.initial_tsn
        self._issued_cookie = bytes(
            self._cookie_rng.getrandbits(8) for _ in range(32)
        )
        params = self._address_params(ep)
        params.append(Parameter(ParamType.STATE_COOKIE, self._issued_cookie))
        init_ack = Chunk(
            ChunkType.INIT_ACK,
            0,
            InitBody(
                st.local_tag,
                A_RWND_BASE,
                self.streams,
                _pow2_ceil(self.streams),
                st.initial_tsn,
            ),
            params,
        )
        reply = SctpPacket(ep.cfg.port, self._peer(ep).cfg.port, st.peer_vtag, [init_ack])
        self._init_ack_pkt = self._transmit(ep, reply, self._primary_pair(ep))

    def _on_init_ack(self, ep: Endpoint, chunk: Chunk) -> None:
        st = ep.state
        if st.phase != PHASE_COOKIE_WAIT:
            return
        body: InitBody = chunk.body
        st.peer_vtag = body.initiate_tag
        st.rcv_cum = body.initial_tsn
        st.ft_floor = body.initial_tsn
        st.peer_declared_addrs = self._declared_addrs(chunk)
        cookies = chunk.find_params(ParamType.STATE_COOKIE)
        cookie = cookies[0].value if cookies else b""
        st.phase = PHASE_COOKIE_ECHOED
        self._cookie_pkt = SctpPacket(
            ep.cfg.port,
            self._peer(ep).cfg.port,
            st.peer_vtag,
            [Chunk(ChunkType.COOKIE_ECHO, 0, value=cookie)],
        )

        def send_cookie() -> None:
            if ep.state.phase != PHASE_COOKIE_ECHOED:
                return
            self._cookie_attempts += 1
            if self._cookie_attempts > self.max_handshake_retries:
                self._handshake_failed = True
                return
            self._transmit(ep, self._cookie_pkt, self._primary_pair(ep), transform=False)
            self._schedule(self.now + self.rto_us, send_cookie)

        send_cookie()

    def _on_cookie_echo(self, ep: Endpoint, chunk: Chunk) -> None:
        st = ep.state
        if chunk.value != self._issued_cookie:
            return
        st.phase = PHASE_ESTABLISHED
        reply = SctpPacket(
            ep.cfg.port,
            self._peer(ep).cfg.port,
            st.peer_vtag,
            [Chunk(ChunkType.COOKIE_ACK)],
        )
        self._transmit(ep, reply, self._primary_pair(ep))

    def _declared_addrs(self, chunk: Chunk) -> list[str]:
        out = []
        for param in chunk.params:
            if param.type in (ParamType.IPV4_ADDRESS, ParamType.IPV6_ADDRESS):
                try:
                    out.append(ip_from_param(param))
                except ValueError:
                    continue
        return out

    # ------------------------------------------------------------------
    # data transfer

    def send_messages(
        self, messages: list[tuple[int, bool, bytes]], sender: str = "a"
    ) -> list[CaptureRecord]:
        """Queue ``(stream_id, ordered, payload)`` messages and run to idle."""
        ep = self.a if sender == "a" else self.b
        if ep.state.phase != PHASE_ESTABLISHED:
            raise SimulationError("DATA may be sent only in ESTABLISHED")
        for sid, _, _ in messages:
            if not 0 <= sid < self.streams:
                raise StreamOutOfRange(f"stream {sid} outside 0..{self.streams - 1}")
        start = len(self.trace)
        slot = max(self.now, self._next_data_slot)
        for sid, ordered, payload in messages:
            self._schedule(
                slot, self._make_data_sender(ep, sid, ordered, payload)
            )
            slot += self.period_us
        self._next_data_slot = slot
        self.run()
        return self.trace[start:]

    def _make_data_sender(self, ep: Endpoint, sid: int, ordered: bool, payload: bytes):
        def fire() -> None:
            st = ep.state
            tsn = st.next_tsn
            st.next_tsn = (st.next_tsn + 1) & 0xFFFFFFFF
            if ordered:
                ssn = st.next_ssn.get(sid, 0)
                st.next_ssn[sid] = (ssn + 1) & 0xFFFF
                flags = 0x03
            else:
                ssn = 0
                flags = 0x07
            if ep is self.a and self.skip_policy is not None and self.skip_policy(tsn):
                self._pending_skips[tsn] = {
                    "sid": sid,
                    "ssn": ssn if ordered else None,
                    "orig_len": len(payload),
                    "stage": "await_cum",
                }
                self.skipped_tsns.append(tsn)
                return
            data = Chunk(ChunkType.DATA, flags, DataBody(tsn, sid, ssn, 0, payload))
            chunks = [data]
            if self.auth_chunks:
                chunks.insert(0, Chunk(ChunkType.AUTH, 0, AuthBody(0, 1, bytes(20))))
            pkt = SctpPacket(
                ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, chunks
            )
            sent = self._transmit(ep, pkt, self._primary_pair(ep), is_data=True)
            rec = _InFlight(sent.chunks, len(payload), self.now)
            ep.state.in_flight[tsn] = rec
            self._schedule_data_timeout(ep, tsn, rec.generation)

        return fire

    def _schedule_data_timeout(self, ep: Endpoint, tsn: int, generation: int) -> None:
        def fire() -> None:
            rec = ep.state.in_flight.get(tsn)
            if rec is None or rec.generation != generation:
                return
            self._retransmit(ep, tsn)

        self._schedule(self.now + self.rto_us, fire)

    def _retransmit(self, ep: Endpoint, tsn: int) -> None:
        rec = ep.state.in_flight.get(tsn)
        if rec is None:
            return
        if rec.attempts >= self.max_retransmit_attempts:
            raise SimulationStalled(f"TSN {tsn} exceeded retransmission budget")
        rec.attempts += 1
        rec.generation += 1
        rec.miss_reports = -FAST_RETRANSMIT_REPORTS  # require fresh evidence
        pair = rec.path_pair
        if pair is None:
            pair = self._retrans_pair(ep, tsn)
            rec.path_pair = pair
        pkt = SctpPacket(
            ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, rec.chunks
        )
        self._transmit(ep, pkt, pair, transform=False, is_data=True)
        rec.sent_at = self.now
        self._schedule_data_timeout(ep, tsn, rec.generation)

    def _on_data(self, ep: Endpoint, chunk: Chunk) -> None:
        st = ep.state
        body: DataBody = chunk.body
        tsn = body.tsn
        if not tsn_after(tsn, st.rcv_cum) or tsn in st.rcv_seen:
            # Already received, or covered by a FORWARD_TSN advance. A
            # TSN at or below the forward floor was abandoned by the
            # sender, so its late payload goes to the covert tap.
            st.dup_pending.append(tsn)
            if not tsn_after(tsn, st.ft_floor) and tsn not in st.covert_tapped:
                st.covert_tapped.add(tsn)
                st.covert_tap.append((tsn, body.payload))
            return
        st.rcv_seen.add(tsn)
        while (st.rcv_cum + 1) & 0xFFFFFFFF in st.rcv_seen:
            st.rcv_cum = (st.rcv_cum + 1) & 0xFFFFFFFF
            st.rcv_seen.discard(st.rcv_cum)
        self._deliver(ep, chunk)

    def _deliver(self, ep: Endpoint, chunk: Chunk) -> None:
        st = ep.state
        body: DataBody = chunk.body
        if chunk.unordered:
            st.delivered.append((body.stream_id, body.payload, self.now))
            return
        sid = body.stream_id
        expected = st.expected_ssn.get(sid, 0)
        if body.ssn == expected:
            st.delivered.append((sid, body.payload, self.now))
            st.expected_ssn[sid] = (expected + 1) & 0xFFFF
            queue = st.reorder.get(sid, {})
            while st.expected_ssn[sid] in queue:
                nxt = st.expected_ssn[sid]
                payload = queue.pop(nxt)
                st.buffered_bytes -= len(payload)
                st.delivered.append((sid, payload, self.now))
                st.expected_ssn[sid] = (nxt + 1) & 0xFFFF
        else:
            st.reorder.setdefault(sid, {})[body.ssn] = body.payload
            st.buffered_bytes += len(body.payload)

    def _send_sack(self, ep: Endpoint) -> None:
        st = ep.state
        gaps = _gap_blocks(st.rcv_cum, st.rcv_seen)
        sack = Chunk(
            ChunkType.SACK,
            0,
            SackBody(
                st.rcv_cum,
                max(0, A_RWND_BASE - st.buffered_bytes),
                gaps,
                list(st.dup_pending),
            ),
        )
        st.dup_pending.clear()
        pkt = SctpPacket(ep.cfg.port, self._peer(ep).cfg.port, st.peer_vtag, [sack])
        self._transmit(ep, pkt, self._primary_pair(ep))

    def _on_sack(self, ep: Endpoint, body: SackBody) -> None:
        st = ep.state
        if tsn_after(body.cum_tsn_ack, st.snd_cum_acked):
            st.snd_cum_acked = body.cum_tsn_ack
        acked = set()
        for tsn in list(st.in_flight):
            if not tsn_after(tsn, body.cum_tsn_ack):
                acked.add(tsn)
        highest = body.cum_tsn_ack
        for start, end in body.gap_blocks:
            for off in range(start, end + 1):
                gap_tsn = (body.cum_tsn_ack + off) & 0xFFFFFFFF
                acked.add(gap_tsn)
                if tsn_after(gap_tsn, highest):
                    highest = gap_tsn
        for tsn in acked:
            st.in_flight.pop(tsn, None)
        # count a miss report for every in-flight TSN the peer should
        # already have seen; three reports trigger fast retransmit
        for tsn in sorted(st.in_flight):
            if tsn_after(highest, tsn):
                rec = st.in_flight[tsn]
                rec.miss_reports += 1
                if rec.miss_reports >= FAST_RETRANSMIT_REPORTS:
                    self._retransmit(ep, tsn)
        if ep is self.a:
            self._advance_skips(body)

    # ------------------------------------------------------------------
    # partial reliability (withhold + forward + optional late send)

    def _advance_skips(self, sack: SackBody) -> None:
        ep = self.a
        for tsn in sorted(self._pending_skips):
            info = self._pending_skips[tsn]
            if info["stage"] == "await_cum" and sack.cum_tsn_ack == (tsn - 1) & 0xFFFFFFFF:
                self._send_forward_tsn(ep, tsn, info)
            elif info["stage"] == "await_advance" and not tsn_after(tsn, sack.cum_tsn_ack):
                self._send_late_data(ep, tsn, info)
            elif info["stage"] == "await_dup_ack" and tsn in sack.dup_tsns:
                del self._pending_skips[tsn]

    def _send_forward_tsn(self, ep: Endpoint, tsn: int, info: dict) -> None:
        streams = [(info["sid"], info["ssn"])] if info["ssn"] is not None else []
        ft = Chunk(ChunkType.FORWARD_TSN, 0, ForwardTsnBody(tsn, streams))
        pkt = SctpPacket(
            ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, [ft]
        )
        self._transmit(ep, pkt, self._primary_pair(ep), transform=False)
        info["stage"] = "await_advance"
        generation = info["ft_generation"] = info.get("ft_generation", 0) + 1

        def recheck() -> None:
            # No SACK confirmed the advance within one RTO; assume the
            # FORWARD_TSN (or its SACK) was lost and send it again.
            current = self._pending_skips.get(tsn)
            if (
                current is not None
                and current["stage"] == "await_advance"
                and current.get("ft_generation") == generation
            ):
                self._send_forward_tsn(ep, tsn, current)

        self._schedule(self.now + self.rto_us, recheck)

    def _send_late_data(self, ep: Endpoint, tsn: int, info: dict) -> None:
        if self.late_payload_provider is None:
            del self._pending_skips[tsn]
            return
        payload = self.late_payload_provider(tsn, info["orig_len"])
        if payload is None:
            del self._pending_skips[tsn]
            return
        sid = info["sid"]
        ssn = info["ssn"] if info["ssn"] is not None else 0
        flags = 0x03 if info["ssn"] is not None else 0x07
        data = Chunk(ChunkType.DATA, flags, DataBody(tsn, sid, ssn, 0, payload))
        pkt = SctpPacket(
            ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, [data]
        )
        self._transmit(ep, pkt, self._primary_pair(ep), transform=False, is_data=True)
        info["stage"] = "await_dup_ack"
        info["late_payload"] = payload
        generation = info["late_generation"] = info.get("late_generation", 0) + 1

        def recheck() -> None:
            current = self._pending_skips.get(tsn)
            if (
                current is not None
                and current["stage"] == "await_dup_ack"
                and current.get("late_generation") == generation
            ):
                current["stage"] = "await_advance"
                self._send_late_data(ep, tsn, current)

        self._schedule(self.now + self.rto_us, recheck)

    # ------------------------------------------------------------------
    # heartbeats and address reconfiguration

    def heartbeat_round(self) -> list[CaptureRecord]:
        """Each side probes every address its peer declared."""
        start = len(self.trace)
        for ep in (self.a, self.b):
            targets = ep.state.peer_declared_addrs or [self._peer(ep).cfg.primary]
            for addr in targets:
                info = struct.pack("!Q", self.now) + bytes(max(0, self.hb_info_len - 8))
                hb = Chunk(
                    ChunkType.HEARTBEAT,
                    0,
                    None,
                    [Parameter(ParamType.HEARTBEAT_INFO, info)],
                )
                pkt = SctpPacket(
                    ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, [hb]
                )
                self._transmit(ep, pkt, (ep.cfg.primary, addr))
        self.run()
        return self.trace[start:]

    def _on_heartbeat(self, ep: Endpoint, chunk: Chunk, pair: tuple[str, str]) -> None:
        ack = Chunk(ChunkType.HEARTBEAT_ACK, 0, None, list(chunk.params))
        pkt = SctpPacket(
            ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, [ack]
        )
        # answer from the probed address, back to the prober
        self._transmit(ep, pkt, (pair[1], pair[0]))

    def asconf_round(self, count: int) -> list[CaptureRecord]:
        """Client sends ``count`` address-reconfiguration requests."""
        start = len(self.trace)
        ep = self.a
        pool = ep.cfg.alternates or (ep.cfg.primary,)
        for i in range(count):
            ep.asconf_seq += 1
            ep.correlation_counter += 1
            addr = pool[i % len(pool)]
            nested = param_from_ip(addr)
            from .wire import _encode_params  # reuse the canonical encoder

            add_ip = Parameter(
                ParamType.ADD_IP,
                struct.pack("!I", ep.correlation_counter) + _encode_params([nested]),
            )
            chunk = Chunk(
                ChunkType.ASCONF,
                 0,
                AsconfBody(ep.asconf_seq),
                [param_from_ip(ep.cfg.primary), add_ip],
            )
            pkt = SctpPacket(
                ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, [chunk]
            )
            self._transmit(ep, pkt, self._primary_pair(ep))
        self.run()
        return self.trace[start:]

    def _on_asconf(self, ep: Endpoint, chunk: Chunk) -> None:
        body: AsconfBody = chunk.body
        reply = Chunk(ChunkType.ASCONF_ACK, 0, AsconfBody(body.seq))
        pkt = SctpPacket(
            ep.cfg.port, self._peer(ep).cfg.port, ep.state.peer_vtag, [reply]
        )
        self._transmit(ep, pkt, self._primary_pair(ep))

    # ------------------------------------------------------------------
    # reporting helpers

    def deliveries(self, endpoint: str = "b") -> list[tuple[int, bytes, int]]:
        ep = self.b if endpoint == "b" else self.a
        return list(ep.state.delivered)

    def stats(self) -> dict[str, int]:
        data_tx = 0
        tsns = set()
        for rec in self.trace:
            if rec.direction != "ab":
                continue
            pkt = rec.packet()
            for chunk in pkt.chunks:
                if chunk.type == ChunkType.DATA:
                    data_tx += 1
                    tsns.add(chunk.body.tsn)
        return {
            "data_transmissions": data_tx,
            "distinct_tsns": len(tsns),
            "retransmissions": data_tx - len(tsns),
            "packets": len(self.trace),
        }


def _pow2_ceil(n: int) -> int:
    p = 1
    while p < n:
        p <<= 1
    return p


def _gap_blocks(cum: int, seen: set[int]) -> list[tuple[int, int]]:
    if not seen:
        return []
    offsets = sorted((t - cum) & 0xFFFFFFFF for t in seen)
    blocks: list[tuple[int, int]] = []
    start = prev = offsets[0]
    for off in offsets[1:]:
        if off == prev + 1:
            prev = off
            continue
        blocks.append((start, prev))
        start = prev = off
    blocks.append((start, prev))
    return [(s, e) for s, e in blocks if e <= 0xFFFF]


# ---------------------------------------------------------------------------
# trace replay (used by the warden's transparency checks)


def replay_deliveries(
    trace: list[CaptureRecord], direction: str = "ab"
) -> list[tuple[int, bytes]]:
    """Feed a trace's DATA/FORWARD_TSN chunks through a fresh receiver.

    The replay sees every captured packet (losses do not apply to a
    tap), deduplicates by TSN, honors FORWARD_TSN advances, and returns
    the upper-layer deliveries as ``(stream_id, payload)`` in order.
    """
    state = AssociationState()
    initialized = False
    out: list[tuple[int, bytes]] = []
    for rec in trace:
        if rec.direction != direction:
            continue
        pkt = rec.packet()
        for chunk in pkt.chunks:
            if chunk.type == ChunkType.DATA:
                body: DataBody = chunk.body
                if not initialized:
                    state.rcv_cum = (body.tsn - 1) & 0xFFFFFFFF
                    state.ft_floor = state.rcv_cum
                    initialized = True
                _replay_data(state, chunk, out)
            elif chunk.type == ChunkType.FORWARD_TSN:
                if not initialized:
                    state.rcv_cum = (chunk.body.new_cum_tsn - 1) & 0xFFFFFFFF
                    initialized = True
                process_forward_tsn(state, chunk.body)
    return out


def _replay_data(state: AssociationState, chunk: Chunk, out: list) -> None:
    body: DataBody = chunk.body
    tsn = body.tsn
    if not tsn_after(tsn, state.rcv_cum) or tsn in state.rcv_seen:
        return
    state.rcv_seen.add(tsn)
    while (state.rcv_cum + 1) & 0xFFFFFFFF in state.rcv_seen:
        state.rcv_cum = (state.rcv_cum + 1) & 0xFFFFFFFF
        state.rcv_seen.discard(state.rcv_cum)
    if chunk.unordered:
        out.append((body.stream_id, body.payload))
        return
    sid = body.stream_id
    expected = state.expected_ssn.get(sid, 0)
    if body.ssn == expected:
        out.append((sid, body.payload))
        state.expected_ssn[sid] = (expected + 1) & 0xFFFF
        queue = state.reorder.get(sid, {})
        while state.expected_ssn[sid] in queue:
            nxt = state.expected_ssn[sid]
            out.append((sid, queue.pop(nxt)))
            state.expected_ssn[sid] = (nxt + 1) & 0xFFFF
    else:
        state.reorder.setdefault(sid, {})[body.ssn] = body.payload
