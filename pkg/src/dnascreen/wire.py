"""Canonical encoding for everything that gets signed, hashed, or shipped.

One rule everywhere: a structure is the concatenation of its fields in a
fixed documented order, each field prefixed by a 4-byte big-endian length.
Integers are fixed-width big-endian. Group elements and scalars use the
fixed width of their backend. The encoding is bit-exact; golden tests and
the byte-flip fuzzers depend on it.
"""

import hashlib

from .errors import DecodeError

LEN_WIDTH = 4


def pack_fields(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        if not isinstance(f, (bytes, bytearray)):
            raise TypeError(f"field must be bytes, got {type(f).__name__}")
        out += len(f).to_bytes(LEN_WIDTH, "big")
        out += f
    return bytes(out)


def unpack_fields(buf: bytes) -> list[bytes]:
    """Split a canonical byte string into its fields; the parse must be exact."""
    fields = []
    i = 0
    n = len(buf)
    while i < n:
        if i + LEN_WIDTH > n:
            raise DecodeError("truncated length prefix")
        flen = int.from_bytes(buf[i:i + LEN_WIDTH], "big")
        i += LEN_WIDTH
        if i + flen > n:
            raise DecodeError("field runs past end of buffer")
        fields.append(buf[i:i + flen])
        i += flen
    return fields


def expect_fields(buf: bytes, count: int) -> list[bytes]:
    fields = unpack_fields(buf)
    if len(fields) != count:
        raise DecodeError(f"expected {count} fields, got {len(fields)}")
    return fields


def pack_u64(v: int) -> bytes:
    if not 0 <= v < 2 ** 64:
        raise ValueError("u64 out of range")
    return v.to_bytes(8, "big")


def unpack_u64(b: bytes) -> int:
    if len(b) != 8:
        raise DecodeError("u64 must be 8 bytes")
    return int.from_bytes(b, "big")


def pack_u32(v: int) -> bytes:
    if not 0 <= v < 2 ** 32:
        raise ValueError("u32 out of range")
    return v.to_bytes(4, "big")


def unpack_u32(b: bytes) -> int:
    if len(b) != 4:
        raise DecodeError("u32 must be 4 bytes")
    return int.from_bytes(b, "big")


def pack_str(s: str) -> bytes:
    return s.encode("utf-8")


def unpack_str(b: bytes) -> str:
    try:
        return b.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DecodeError(f"invalid utf-8: {e}") from None


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest_fields(*fields: bytes) -> bytes:
    return digest(pack_fields(*fields))
