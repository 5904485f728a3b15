"""Length-prefixed canonical encoding.

Every variable-length field is written as a 4-byte big-endian length followed
by the raw bytes. Integers are fixed-width big-endian. The same encoding backs
transaction arguments, block serialization and state digests, so persisted
ledgers are bit-stable.
"""

from __future__ import annotations

import struct

_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")


def lp(data: bytes) -> bytes:
    return _LEN.pack(len(data)) + data


def u64(n: int) -> bytes:
    return _U64.pack(n)


def i64(n: int) -> bytes:
    return _I64.pack(n)


def encode_args(*args: bytes) -> bytes:
    return b"".join(lp(a) for a in args)


class Reader:
    """Cursor over a canonical byte string."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ValueError("truncated record")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def lp(self) -> bytes:
        (n,) = _LEN.unpack(self.take(4))
        return self.take(n)

    def u32(self) -> int:
        return _LEN.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def i64(self) -> int:
        return _I64.unpack(self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def decode_args(data: bytes) -> list[bytes]:
    r = Reader(data)
    out = []
    while not r.exhausted:
        out.append(r.lp())
    return out


def time_ms(t: float) -> int:
    """Virtual seconds as an integer millisecond count (serialized form)."""
    return round(t * 1000)
