"""File formats: the SFEB embedding container and concept-vocabulary JSON.

SFEB byte layout (all integers little-endian):

    offset  size  field
    0       4     magic "SFEB" (0x53 0x46 0x45 0x42)
    4       4     version, u32 (this writer emits 1; readers reject anything else)
    8       1     dtype, u8 (0 = float32 little-endian; the only code defined)
    9       1     ndim, u8 (2 for token/phrase matrices, 3 for latent grids)
    10      4*n   dims, ndim x u32
    ...           payload: row-major float32 scalars, prod(dims) of them
    ...           optional token table: count u32, then per token a u32 byte
                  length, that many UTF-8 bytes, and a u8 validity flag
    end-4   4     CRC32 (IEEE) of every preceding byte, u32

Values are widened to float64 on read and rounded to float32 on write, so a
read-then-write round trip reproduces a valid file byte for byte.

Concept vocabularies pair a JSON file {"concepts": [{"label", "phrases"}]}
with a companion SFEB holding one embedding column per phrase (a multi-token
phrase should be pooled to its mean embedding upstream). Total phrase count
and column count must agree.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import (
    CorruptFile,
    FormatError,
    InvalidDimensions,
    IoError,
    NonFiniteInput,
    SchemaError,
    UnsupportedVersion,
)
from .filtering import ConceptSubspace, PromptEmbedding
from .linalg import DEFAULT_PINV_TOLERANCE

MAGIC = b"SFEB"
VERSION = 1
DTYPE_F32 = 0

# Refuse dim products past this before trying to allocate anything.
_MAX_ELEMENTS = 1 << 40


def container_bytes(matrix, tokens=None) -> bytes:
    """Serialize a 2-D or 3-D matrix (and optional token table) to SFEB bytes."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise InvalidDimensions(f"container payload must be 2-D or 3-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise NonFiniteInput("container payload contains NaN or infinity")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<BB", DTYPE_F32, arr.ndim)
    for d in arr.shape:
        blob += struct.pack("<I", d)
    blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    if tokens is not None:
        blob += struct.pack("<I", len(tokens))
        for entry in tokens:
            if isinstance(entry, str):
                label, valid = entry, True
            else:
                label, valid = entry
            raw = str(label).encode("utf-8")
            blob += struct.pack("<I", len(raw))
            blob += raw
            blob += struct.pack("<B", 1 if valid else 0)
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    return bytes(blob)


def write_container(matrix, path, tokens=None) -> None:
    """Write an SFEB file atomically: the path either gets the complete
    container or is left untouched."""
    data = container_bytes(matrix, tokens)
    write_bytes_atomic(path, data)


def write_bytes_atomic(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".sfeb-")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class _Cursor:
    """Bounds-checked reader over the container bytes."""

    def __init__(self, data: bytes, limit: int):
        self.data = data
        self.pos = 0
        self.limit = limit

    def take(self, n: int) -> bytes:
        if self.pos + n > self.limit:
            raise CorruptFile("container is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def decode_container(data: bytes):
    """Parse SFEB bytes into (float64 array, token table or None)."""
    if len(data) < 4:
        raise CorruptFile("container is truncated")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 14:
        raise CorruptFile("container is truncated")
    crc_stored = struct.unpack("<I", data[-4:])[0]
    crc_actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    cur = _Cursor(data, len(data) - 4)
    cur.take(4)  # magic
    version = cur.u32()
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version} is not supported (expected {VERSION})")
    dtype = cur.u8()
    if dtype != DTYPE_F32:
        raise FormatError(f"unknown dtype code {dtype}")
    ndim = cur.u8()
    if ndim not in (2, 3):
        raise FormatError(f"ndim must be 2 or 3, got {ndim}")
    dims = tuple(cur.u32() for _ in range(ndim))
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise InvalidDimensions(f"dims {dims} overflow the addressable payload size")
    if crc_actual != crc_stored:
        raise CorruptFile(
            f"CRC mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
        )
    payload = cur.take(4 * count)
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if values.size and not np.all(np.isfinite(values)):
        raise FormatError("container payload contains non-finite values")
    tokens = None
    if cur.pos < cur.limit:
        n_tokens = cur.u32()
        tokens = []
        for _ in range(n_tokens):
            length = cur.u32()
            raw = cur.take(length)
            try:
                label = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptFile(f"token label is not valid UTF-8: {exc}") from exc
            flag = cur.u8()
            tokens.append((label, bool(flag)))
        if cur.pos != cur.limit:
            raise CorruptFile("trailing bytes after the token table")
    return values, tokens


def read_container(path):
    """Read an SFEB file; returns (float64 array, token table or None)."""
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_container(data)


def load_prompt(path) -> PromptEmbedding:
    """Read a 2-D container as a prompt. Without a token table every row is a
    valid token with a generated label."""
    matrix, tokens = read_container(path)
    if matrix.ndim != 2:
        raise FormatError(f"prompt container must be 2-D, got {matrix.ndim}-D")
    if tokens is None:
        labels = tuple(f"token{i}" for i in range(matrix.shape[0]))
        valid = np.ones(matrix.shape[0], dtype=bool)
    else:
        if len(tokens) != matrix.shape[0]:
            raise SchemaError(
                f"token table has {len(tokens)} entries for {matrix.shape[0]} embedding rows"
            )
        labels = tuple(label for label, _ in tokens)
        valid = np.array([flag for _, flag in tokens], dtype=bool)
    return PromptEmbedding(labels, matrix, valid)


def load_concepts(json_path, embedding_path, tolerance: float = DEFAULT_PINV_TOLERANCE) -> ConceptSubspace:
    """Build a concept subspace from a vocabulary JSON and its companion
    embedding container (one column per phrase, in vocabulary order)."""
    try:
        with open(json_path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise IoError(f"cannot read {json_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{json_path} is not valid JSON: {exc}") from exc
    phrases = _parse_vocabulary(doc)
    matrix, _ = read_container(embedding_path)
    if matrix.ndim != 2:
        raise SchemaError(f"concept embedding container must be 2-D, got {matrix.ndim}-D")
    if matrix.shape[1] != len(phrases):
        raise SchemaError(
            f"vocabulary lists {len(phrases)} phrases but the embedding file carries "
            f"{matrix.shape[1]} columns"
        )
    return ConceptSubspace.from_basis(matrix, labels=phrases, tolerance=tolerance)


def _parse_vocabulary(doc) -> tuple[str, ...]:
    if not isinstance(doc, dict) or "concepts" not in doc:
        raise SchemaError('vocabulary JSON must be an object with a "concepts" array')
    concepts = doc["concepts"]
    if not isinstance(concepts, list):
        raise SchemaError('"concepts" must be an array')
    phrases: list[str] = []
    seen_labels: set[str] = set()
    for entry in concepts:
        if not isinstance(entry, dict):
            raise SchemaError("each concept must be an object")
        label = entry.get("label")
        if not isinstance(label, str) or not label:
            raise SchemaError("each concept needs a non-empty string label")
        if label in seen_labels:
            raise SchemaError(f"duplicate concept label {label!r}")
        seen_labels.add(label)
        entry_phrases = entry.get("phrases")
        if not isinstance(entry_phrases, list) or not all(isinstance(p, str) for p in entry_phrases):
            raise SchemaError(f"concept {label!r} needs a list of phrase strings")
        phrases.extend(f"{label}: {p}" for p in entry_phrases)
    return tuple(phrases)
