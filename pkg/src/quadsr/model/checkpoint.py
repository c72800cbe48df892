"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"QDSRCKPT"
    version    uint32    1
    cfg_len    uint32    length of the UTF-8 JSON config block
    cfg        bytes     JSON object: {"model": {...}, "meta": {...}}
    count      uint32    number of tensor records
    record*    name_len uint16, name UTF-8, ndim uint8, dims uint32 × ndim,
               payload float32 little-endian, C order

Saving and loading float32 parameters is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..numerics import Tensor
from .config import ModelConfig

MAGIC = b"QDSRCKPT"
VERSION = 1


def save_checkpoint(path, params: dict, cfg: ModelConfig, meta: dict | None = None) -> None:
    header = json.dumps({"model": cfg.to_dict(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(params))]
    for name, tensor in params.items():
        arr = np.asarray(tensor.data if isinstance(tensor, Tensor) else tensor)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, dtype=np.float32) -> tuple[dict, ModelConfig, dict]:
    """Return ``(params, config, meta)``."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    pos = 8
    version, cfg_len = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(buf[pos : pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes")
    return params, ModelConfig.from_dict(header["model"]), header.get("meta", {})
