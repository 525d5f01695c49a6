"""Binary container shared by hazard-model and policy checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes   b"SVLCKPT\\0"
    version    u32       currently 1
    meta_len   u32       length of the JSON metadata blob
    meta       bytes     UTF-8 JSON, keys sorted, compact separators
    n_arrays   u32
    shape table, per array:
        name_len u16, name (UTF-8), ndim u8, dims u64 * ndim
    data       row-major float64 payloads in shape-table order

Parameters round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SVLCKPT\0"
VERSION = 1


def dumps(arrays: dict, meta: dict) -> bytes:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(arrays))]
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode()
        out.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload.append(arr.tobytes())
    return b"".join(out + payload)


def loads(data: bytes):
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(data[pos:pos + meta_len].decode())
    pos += meta_len
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    table = []
    for _ in range(n):
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + klen].decode()
        pos += klen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        table.append((name, shape))
    arrays = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")
    return arrays, meta


def save(path, arrays: dict, meta: dict) -> None:
    with open(path, "wb") as f:
        f.write(dumps(arrays, meta))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
