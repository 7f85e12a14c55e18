"""Versioned binary container used by checkpoints and the dataset cache.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"RKCNBIN\\0"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H
    16      H     UTF-8 JSON header: {"kind", "meta", "arrays": [{"name", "dtype", "shape", "nbytes"}]}
    16+H    ...   raw array bytes, C order, little-endian, concatenated in header order
    end-4   4     uint32 CRC-32 of every preceding byte

``dtype`` is a numpy dtype string with explicit byte order (e.g. ``"<f8"``).
The header is written with sorted keys, so equal content gives equal bytes.
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import CheckpointError

MAGIC = b"RKCNBIN\0"
FORMAT_VERSION = 1


def dumps(kind: str, meta: dict, arrays: dict) -> bytes:
    entries, blobs = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes(order="C")
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "nbytes": len(blob)})
        blobs.append(blob)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(raw: bytes, kind: str):
    """Return ``(meta, arrays)``; raises :class:`CheckpointError` on any inconsistency."""
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointError("not a rankcon container (bad magic or truncated)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("container checksum mismatch (file corrupt or truncated)")
    version, hlen = struct.unpack("<II", body[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported container version {version} (expected {FORMAT_VERSION})")
    try:
        header = json.loads(body[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable container header: {exc}") from None
    if header.get("kind") != kind:
        raise CheckpointError(f"expected a {kind!r} container, found {header.get('kind')!r}")
    arrays, pos = {}, 16 + hlen
    for entry in header["arrays"]:
        end = pos + entry["nbytes"]
        if end > len(body):
            raise CheckpointError(f"array {entry['name']!r} runs past end of file")
        arr = np.frombuffer(body[pos:end], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
        pos = end
    if pos != len(body):
        raise CheckpointError("trailing bytes after last array")
    return header["meta"], arrays


def write(path, kind: str, meta: dict, arrays: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(kind, meta, arrays))


def read(path, kind: str):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"no such file: {path}") from None
    return loads(raw, kind)
