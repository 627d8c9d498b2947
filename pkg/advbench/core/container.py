"""
The "ADVW" tensor archive.

Layout (all integers u32 little-endian):

    b"ADVW" | version (=1) | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float64 LE values (row-major)

Metadata travels as a final tensor named "__meta__": a rank-1 tensor whose
values are the UTF-8 bytes of "key=value" lines. Model weights and
adversarial batches both use this container.
"""

import hashlib
import logging
import math
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from ..errors import ConfigError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b"ADVW"
VERSION = 1
META_KEY = "__meta__"

_U32 = struct.Struct("<I")


def format_meta(meta: Mapping[str, object]) -> str:
    """Render metadata as key=value lines."""
    lines = []
    for key, value in meta.items():
        text = str(value)
        if not key or "=" in key or "\n" in key or "\n" in text:
            raise ConfigError(f"Metadata entry '{key}' cannot be stored as a key=value line")
        lines.append(f"{key}={text}")
    return "\n".join(lines)


def parse_meta(text: str) -> Dict[str, str]:
    meta: Dict[str, str] = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"Malformed metadata line: {line!r}")
        meta[key] = value
    return meta


def encode_archive(tensors: Mapping[str, np.ndarray], meta: Mapping[str, object]) -> bytes:
    """Serialize tensors plus metadata to ADVW bytes."""
    if META_KEY in tensors:
        raise ConfigError(f"Tensor name '{META_KEY}' is reserved for metadata")

    meta_bytes = format_meta(meta).encode("utf-8")
    entries = [(name, np.asarray(value, dtype=np.float64)) for name, value in tensors.items()]
    entries.append((META_KEY, np.frombuffer(meta_bytes, dtype=np.uint8).astype(np.float64)))

    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(entries))]
    for name, value in entries:
        encoded_name = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded_name)))
        parts.append(encoded_name)
        parts.append(_U32.pack(value.ndim))
        parts.extend(_U32.pack(dim) for dim in value.shape)
        parts.append(np.ascontiguousarray(value).astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    """Bounds-checked cursor over archive bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise FormatError(f"Truncated archive while reading {what}", self.offset)
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_archive(data: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """
    Parse ADVW bytes.

    Returns:
        (tensors by name, metadata dict)

    Raises:
        FormatError: On bad magic, version mismatch, truncation, trailing
            bytes, duplicate names, non-finite values or a bad metadata blob
    """
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {MAGIC!r}", 0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(f"Unsupported archive version {version}, expected {VERSION}", 4)

    count = reader.u32("tensor count")
    tensors: Dict[str, np.ndarray] = {}
    meta_text = ""
    seen_meta = False
    for _ in range(count):
        start = reader.offset
        name_length = reader.u32("name length")
        try:
            name = reader.take(name_length, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("Tensor name is not valid UTF-8", start)
        if name in tensors or (name == META_KEY and seen_meta):
            raise FormatError(f"Duplicate tensor '{name}'", start)

        rank = reader.u32(f"rank of '{name}'")
        dims = tuple(reader.u32(f"dims of '{name}'") for _ in range(rank))
        size = math.prod(dims)
        values_offset = reader.offset
        raw = reader.take(8 * size, f"values of '{name}'")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        if not np.all(np.isfinite(values)):
            raise FormatError(f"Tensor '{name}' contains non-finite values", values_offset)

        if name == META_KEY:
            seen_meta = True
            if rank != 1 or np.any(values != np.round(values)) or np.any((values < 0) | (values > 255)):
                raise FormatError("Metadata blob is not a byte string", values_offset)
            try:
                meta_text = values.astype(np.uint8).tobytes().decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("Metadata blob is not valid UTF-8", values_offset)
        else:
            tensors[name] = values

    if reader.offset != len(data):
        raise FormatError(f"{len(data) - reader.offset} unexpected trailing bytes", reader.offset)
    return tensors, parse_meta(meta_text)


def write_archive(
    path: Union[str, Path], tensors: Mapping[str, np.ndarray], meta: Mapping[str, object]
) -> str:
    """
    Write an archive and return its content digest.

    Raises:
        OSError: If the path is not writable
    """
    data = encode_archive(tensors, meta)
    Path(path).write_bytes(data)
    logger.info(f"Wrote {len(tensors)} tensors to {path}")
    return digest(data)


def read_archive(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, str], str]:
    """
    Read an archive.

    Returns:
        (tensors, metadata, content digest)
    """
    data = Path(path).read_bytes()
    tensors, meta = decode_archive(data)
    logger.debug(f"Read {len(tensors)} tensors from {path}")
    return tensors, meta, digest(data)


def digest(data: bytes) -> str:
    """Short SHA-256 content hash used to identify models and datasets in reports."""
    return hashlib.sha256(data).hexdigest()[:16]
