"""Shared binary-file plumbing: CRC-64 and little-endian field helpers.

Both on-disk formats (feature files and checkpoints) end with a CRC-64 of
every preceding byte. The polynomial is the reflected ECMA-182 one (as used
by xz), init and xorout all-ones.
"""

import struct

import numpy as np

from .errors import FormatError

_POLY = 0xC96C5795D7870F42


def _build_table():
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ _POLY if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_TABLE = _build_table()


def crc64(data: bytes, crc: int = 0) -> int:
    crc ^= 0xFFFFFFFFFFFFFFFF
    for byte in data:
        crc = _TABLE[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


def pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def pack_u64(value: int) -> bytes:
    return struct.pack("<Q", value)


class Reader:
    """Cursor over an in-memory buffer with truncation checks."""

    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f32_array(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").copy()

    def expect_magic(self, magic: bytes):
        if self.take(len(magic)) != magic:
            raise FormatError(f"{self.path}: bad magic, expected {magic!r}")

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.path}: {len(self.buf) - self.pos} trailing bytes")


def verify_crc(buf: bytes, path: str) -> bytes:
    """Split off and check the trailing CRC-64; returns the payload bytes."""
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated file")
    payload, tail = buf[:-8], buf[-8:]
    expected = struct.unpack("<Q", tail)[0]
    actual = crc64(payload)
    if actual != expected:
        raise FormatError(f"{path}: CRC mismatch ({actual:016x} != {expected:016x})")
    return payload


def append_crc(payload: bytes) -> bytes:
    return payload + pack_u64(crc64(payload))
