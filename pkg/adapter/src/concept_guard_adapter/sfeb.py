"""Minimal reader/writer for the core's embedding container format.

Deliberately independent of the core package: the adapter exchanges files
with the core and never imports it, so this codec is the adapter's half of
the wire contract. Layout: magic "SFEB", u32 version (1), u8 dtype
(0 = float32), u8 ndim (2 or 3), u32 dims, row-major float32 payload, an
optional token table (u32 count, then u32 length + UTF-8 + u8 valid flag per
token), and a closing CRC-32 over all preceding bytes. Little-endian
throughout.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import FormatError

MAGIC = b"SFEB"
VERSION = 1


def encode_container(matrix, tokens=None) -> bytes:
    arr = np.ascontiguousarray(matrix, dtype=np.float32)
    if arr.ndim not in (2, 3):
        raise FormatError(f"container rank must be 2 or 3, got {arr.ndim}")
    if not np.isfinite(arr).all():
        raise FormatError("container payload must be finite")
    if tokens is not None and arr.ndim != 2:
        raise FormatError("token tables only apply to 2-D containers")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<BB", 0, arr.ndim)
    for dim in arr.shape:
        out += struct.pack("<I", dim)
    out += arr.tobytes()
    if tokens is not None:
        out += struct.pack("<I", len(tokens))
        for text, valid in tokens:
            raw = text.encode("utf-8")
            out += struct.pack("<I", len(raw)) + raw + struct.pack("<B", 1 if valid else 0)
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def decode_container(data: bytes):
    """Parse container bytes into (float32 matrix, token table or None)."""
    if len(data) < 18:
        raise FormatError("container is too short")
    if data[:4] != MAGIC:
        raise FormatError("bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    dtype_code, ndim = data[8], data[9]
    if dtype_code != 0 or ndim not in (2, 3):
        raise FormatError(f"unsupported dtype {dtype_code} or rank {ndim}")
    offset = 10
    if len(data) < offset + 4 * ndim + 4:
        raise FormatError("container is truncated in the header")
    dims = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += 4 * ndim
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise FormatError("checksum mismatch")
    count = 1
    for dim in dims:
        count *= int(dim)
    if count > 1 << 40:
        raise FormatError(f"container claims {count} elements")
    payload_end = offset + 4 * count
    if payload_end > len(data) - 4:
        raise FormatError("container is truncated in the payload")
    matrix = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
    if not np.isfinite(matrix).all():
        raise FormatError("container payload must be finite")
    offset = payload_end
    tokens = None
    if offset < len(data) - 4:
        (n_tokens,) = struct.unpack_from("<I", data, offset)
        offset += 4
        tokens = []
        for _ in range(n_tokens):
            if offset + 4 > len(data) - 4:
                raise FormatError("container is truncated in the token table")
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            if offset + length + 1 > len(data) - 4:
                raise FormatError("container is truncated in the token table")
            try:
                text = data[offset : offset + length].decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError("token text is not valid UTF-8") from exc
            offset += length
            tokens.append((text, data[offset] != 0))
            offset += 1
    if offset != len(data) - 4:
        raise FormatError("trailing bytes after the token table")
    return matrix, tokens


def read_container(path):
    with open(path, "rb") as handle:
        return decode_container(handle.read())


def write_container(matrix, path, tokens=None) -> None:
    with open(path, "wb") as handle:
        handle.write(encode_container(matrix, tokens))
