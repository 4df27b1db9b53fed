"""BNNDATA container: self-describing binary dataset files.

Layout::

    8 bytes   magic b"BNNDATA\\0"
    u16 LE    format version
    u32 LE    metadata length L
    L bytes   UTF-8 JSON metadata (includes an "arrays" table)
    payload   arrays in table order; "f32" arrays as little-endian float32
              row-major, "bits" arrays as packed bits (little bit order)
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"BNNDATA\0"
VERSION = 1


def _nbytes(kind, shape):
    n = int(np.prod(shape)) if shape else 1
    return 4 * n if kind == "f32" else (n + 7) // 8


def encode_dataset(arrays: dict, metadata: dict | None = None) -> bytes:
    meta = dict(metadata or {})
    table, chunks = [], []
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if a.dtype == bool:
            kind = "bits"
            chunks.append(np.packbits(a.ravel(), bitorder="little").tobytes())
        else:
            kind = "f32"
            chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
        table.append({"name": name, "kind": kind, "shape": list(a.shape)})
    meta["arrays"] = table
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob + b"".join(chunks)


def decode_dataset(data: bytes):
    """Inverse of :func:`encode_dataset`; returns ``(arrays, metadata)``."""
    if len(data) < 14:
        raise FormatError(f"BNNDATA header truncated: {len(data)} bytes, need 14")
    if data[:8] != MAGIC:
        raise FormatError(f"bad BNNDATA magic {data[:8]!r}")
    version, mlen = struct.unpack("<HI", data[8:14])
    if version != VERSION:
        raise FormatError(f"unsupported BNNDATA version {version}")
    if len(data) < 14 + mlen:
        raise FormatError(f"BNNDATA metadata truncated: expected {14 + mlen} bytes, got {len(data)}")
    try:
        meta = json.loads(data[14:14 + mlen].decode("utf-8"))
        table = meta["arrays"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"bad BNNDATA metadata: {exc}") from exc
    expected = 14 + mlen + sum(_nbytes(t["kind"], t["shape"]) for t in table)
    if len(data) != expected:
        raise FormatError(f"BNNDATA payload size mismatch: expected {expected} bytes, got {len(data)}")
    arrays, pos = {}, 14 + mlen
    for t in table:
        shape = tuple(t["shape"])
        nb = _nbytes(t["kind"], shape)
        chunk = data[pos:pos + nb]
        if t["kind"] == "f32":
            arrays[t["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        elif t["kind"] == "bits":
            n = int(np.prod(shape)) if shape else 1
            bits = np.unpackbits(np.frombuffer(chunk, dtype=np.uint8), count=n, bitorder="little")
            arrays[t["name"]] = bits.astype(bool).reshape(shape)
        else:
            raise FormatError(f"unknown array kind {t['kind']!r}")
        pos += nb
    return arrays, meta


def save_dataset(path, arrays: dict, metadata: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_dataset(arrays, metadata))


def load_dataset(path):
    with open(path, "rb") as fh:
        return decode_dataset(fh.read())
