"""CRC-32C (Castagnoli polynomial), table-driven.

This is the checksum SCTP carries in its common header. The value
returned here is the plain CRC-32C integer (check value for
b"123456789" is 0xE3069283); the codec stores it little-endian on the
wire, which is the transmitted byte order for SCTP.
"""

_POLY_REFLECTED = 0x82F63B78  # bit-reversed 0x1EDC6F41


def _build_table() -> tuple[int, ...]:
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _POLY_REFLECTED if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_TABLE = _build_table()


def crc32c(data: bytes, crc: int = 0) -> int:
    """Return the CRC-32C of ``data``, continuing from ``crc`` if given."""
    crc ^= 0xFFFFFFFF
    for byte in data:
        crc = (crc >> 8) ^ _TABLE[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFFFFFF
