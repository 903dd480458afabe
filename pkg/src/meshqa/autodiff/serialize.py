"""Flat binary parameter container.

Layout (little endian)::

    magic   4 bytes  b"MQAW"
    version u32
    count   u32
    count x { name_len u32, name bytes (utf-8), rank u32, dims u32[rank], values f32[prod(dims)] }
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MQAW"
VERSION = 1


class ContainerError(ValueError):
    pass


def save_parameters(path, named: list[tuple[str, np.ndarray]]) -> None:
    names = [n for n, _ in named]
    if len(set(names)) != len(names):
        raise ContainerError("parameter names must be unique")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, value in named:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_parameters(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ContainerError(f"{path}: not a parameter container (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported container version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 4 * size > len(buf):
                raise ContainerError(f"{path}: truncated container")
            values = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            out[name] = values.copy()
    except struct.error as exc:
        raise ContainerError(f"{path}: truncated container") from exc
    if pos != len(buf):
        raise ContainerError(f"{path}: trailing bytes after {count} parameters")
    return out
