"""The .dfw weight container.

Layout, all integers little-endian:

    magic "DFCW" | u32 version | u32 config_len | config JSON (UTF-8)
    u32 block_count | blocks

    block: u32 name_len | name UTF-8 | u32 rank | u64 dims[rank] | f32 data

Blocks appear in the model's canonical parameter order. Data is stored as
32-bit floats; callers get float64 arrays back for training math.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .config import CodecConfig
from .errors import FormatError

DFW_MAGIC = b"DFCW"
DFW_VERSION = 1


def weights_to_bytes(params: dict[str, np.ndarray], config: CodecConfig) -> bytes:
    buf = io.BytesIO()
    cfg_json = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(DFW_MAGIC)
    buf.write(struct.pack("<I", DFW_VERSION))
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    buf.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def weights_from_bytes(data: bytes) -> tuple[dict[str, np.ndarray], CodecConfig]:
    view = memoryview(data)
    off = 0

    def unpack(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(view):
            raise FormatError("weight file truncated")
        vals = struct.unpack_from(fmt, view, off)
        off += size
        return vals

    magic = bytes(view[:4])
    off = 4
    if magic != DFW_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DFW_MAGIC!r}")
    (version,) = unpack("<I")
    if version != DFW_VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    (cfg_len,) = unpack("<I")
    if off + cfg_len > len(view):
        raise FormatError("weight file truncated in config")
    config = CodecConfig.from_dict(json.loads(bytes(view[off : off + cfg_len])))
    off += cfg_len
    (count,) = unpack("<I")

    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = unpack("<I")
        name = bytes(view[off : off + name_len]).decode("utf-8")
        off += name_len
        (rank,) = unpack("<I")
        dims = unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        nbytes = n * 4
        if off + nbytes > len(view):
            raise FormatError(f"weight file truncated in block {name!r}")
        arr = np.frombuffer(view, dtype="<f4", count=n, offset=off)
        off += nbytes
        params[name] = arr.reshape(dims).astype(np.float64)
    if off != len(view):
        raise FormatError("trailing bytes after final weight block")
    return params, config


def save_weights(path, params: dict[str, np.ndarray], config: CodecConfig) -> int:
    data = weights_to_bytes(params, config)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_weights(path) -> tuple[dict[str, np.ndarray], CodecConfig]:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())
