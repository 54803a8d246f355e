"""Binary container for named float32 tensors plus text metadata.

Layout: magic "TAPTCKPT", version u32 LE, u32 byte length + UTF-8
metadata ("key=value" lines, keys sorted), then one record per tensor:
u32 name length, name bytes, u32 ndim, u32 per dimension, float32 LE
payload in row-major order.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"TAPTCKPT"
VERSION = 1


def checkpoint_bytes(metadata: Mapping[str, str], tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    lines = []
    for key in sorted(metadata):
        value = metadata[key]
        if "\n" in key or "\n" in value or "=" in key:
            raise ValueError(f"metadata entry {key!r} contains reserved characters")
        lines.append(f"{key}={value}")
    meta_blob = "\n".join(lines).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_blob)))
    parts.append(meta_blob)
    for name, arr in tensors.items():
        name_blob = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(name_blob)))
        parts.append(name_blob)
        parts.append(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def write_checkpoint(path, metadata: Mapping[str, str], tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(metadata, tensors))


def parse_checkpoint(blob: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise DataError("truncated checkpoint")
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    def take_u32() -> int:
        return struct.unpack("<I", take(4))[0]

    offset = 0
    if take(len(MAGIC)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version = take_u32()
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    meta_blob = take(take_u32())
    metadata: dict[str, str] = {}
    if meta_blob:
        for ln, line in enumerate(meta_blob.decode("utf-8").split("\n"), start=1):
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"metadata line {ln} has no '='")
            metadata[key] = value
    tensors: dict[str, np.ndarray] = {}
    while offset < len(blob):
        name = take(take_u32()).decode("utf-8")
        ndim = take_u32()
        shape = tuple(take_u32() for _ in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        payload = take(4 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return metadata, tensors


def read_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
