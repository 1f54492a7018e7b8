"""Bit sequences used as covert payloads.

Convention used throughout the package: most-significant-bit first,
both when expanding integers/bytes into bits and when splicing bits
back into protocol fields. Nothing here pads implicitly; conversions
that need whole bytes raise unless the caller pads first.

Covert channels that carry a stream of unknown length frame it with
:func:`frame` / :func:`unframe` (a 16-bit length prefix counting
payload bits), so a decoder can stop exactly where the sender stopped.
"""
from __future__ import annotations

from typing import Iterable, Iterator


class FrameError(ValueError):
    """Raised when a framed bit stream is too short or corrupt."""


class Bits:
    """Immutable sequence of 0/1 values."""

    __slots__ = ("_b",)

    def __init__(self, bits: "Bits | str | Iterable[int]" = ()) -> None:
        if isinstance(bits, Bits):
            self._b = bits._b
            return
        if isinstance(bits, str):
            if bits.strip("01"):
                raise ValueError("bit string may contain only '0' and '1'")
            self._b = bytes(1 if c == "1" else 0 for c in bits)
            return
        raw = bytes(bits)
        if any(v not in (0, 1) for v in raw):
            raise ValueError("bit values must be 0 or 1")
        self._b = raw

    # construction -----------------------------------------------------

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bits":
        out = bytearray()
        for byte in data:
            for shift in range(7, -1, -1):
                out.append((byte >> shift) & 1)
        return cls(out)

    @classmethod
    def from_int(cls, value: int, width: int) -> "Bits":
        if width < 0:
            raise ValueError("width must be non-negative")
        if value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        return cls((value >> shift) & 1 for shift in range(width - 1, -1, -1))

    @classmethod
    def from_hex(cls, text: str) -> "Bits":
        return cls.from_bytes(bytes.fromhex(text))

    @classmethod
    def join(cls, parts: Iterable["Bits"]) -> "Bits":
        out = Bits()
        out._b = b"".join(p._b for p in parts)
        return out

    @classmethod
    def random(cls, rng, nbits: int) -> "Bits":
        return cls(rng.getrandbits(1) for _ in range(nbits))

    # conversion -------------------------------------------------------

    def to_int(self) -> int:
        value = 0
        for bit in self._b:
            value = (value << 1) | bit
        return value

    def to_bytes(self) -> bytes:
        if len(self._b) % 8:
            raise ValueError("bit length is not a multiple of 8; pad explicitly")
        return bytes(
            Bits(self._b[i : i + 8]).to_int() for i in range(0, len(self._b), 8)
        )

    def to01(self) -> str:
        return "".join("1" if bit else "0" for bit in self._b)

    def pad_to_byte(self) -> "Bits":
        """Right-pad with zero bits up to the next byte boundary."""
        extra = (-len(self._b)) % 8
        return self + Bits([0] * extra) if extra else self

    def chunked(self, n: int) -> Iterator["Bits"]:
        """Yield consecutive groups of ``n`` bits; the last may be short."""
        if n < 1:
            raise ValueError("group size must be >= 1")
        for i in range(0, len(self._b), n):
            yield self[i : i + n]

    # sequence protocol ------------------------------------------------

    def __len__(self) -> int:
        return len(self._b)

    def __iter__(self) -> Iterator[int]:
        return iter(self._b)

    def __getitem__(self, key):
        if isinstance(key, slice):
            out = Bits()
            out._b = self._b[key]
            return out
        return self._b[key]

    def __add__(self, other: "Bits") -> "Bits":
        out = Bits()
        out._b = self._b + Bits(other)._b
        return out

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Bits):
            return self._b == other._b
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._b)

    def __bool__(self) -> bool:
        return bool(self._b)

    def __repr__(self) -> str:
        shown = self.to01()
        if len(shown) > 64:
            shown = shown[:61] + "..."
        return f"Bits('{shown}')"


FRAME_HEADER_BITS = 16
MAX_FRAME_PAYLOAD_BITS = 0xFFFF


def frame(payload: Bits) -> Bits:
    """Prefix ``payload`` with its bit count (16-bit, MSB first)."""
    if len(payload) > MAX_FRAME_PAYLOAD_BITS:
        raise FrameError(f"payload of {len(payload)} bits exceeds frame limit")
    return Bits.from_int(len(payload), FRAME_HEADER_BITS) + payload


def unframe(stream: Bits) -> Bits:
    """Recover the framed payload from the front of ``stream``."""
    if len(stream) < FRAME_HEADER_BITS:
        raise FrameError("stream shorter than frame header")
    n = stream[:FRAME_HEADER_BITS].to_int()
    if len(stream) < FRAME_HEADER_BITS + n:
        raise FrameError(f"frame announces {n} bits, stream has {len(stream) - FRAME_HEADER_BITS}")
    return stream[FRAME_HEADER_BITS : FRAME_HEADER_BITS + n]
