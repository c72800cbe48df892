"""Image files <-> model-space arrays.

8-bit formats (PNG, PGM, PPM) map a stored value ``v`` in [0, 255] to
``v / 127.5 - 1`` and back via ``clip(round((x + 1) * 127.5), 0, 255)``;
the round trip is exact for every 8-bit value. PFM stores model-space
floats unchanged. Masks are written as packed PBM (P4), 1 = black = active.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def to_model(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=np.float64) / 127.5 - 1.0


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Read PNG/PGM/PPM/PFM into a C×H×W float64 array in model space."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I", "F"):
                raise DataError(f"{path}: only 8-bit images are supported")
            im = im.convert("L") if im.mode in ("L", "1", "P", "LA") else im.convert("RGB")
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return to_model(arr)


def write_image(path, x: np.ndarray) -> None:
    """Write a C×H×W (C in {1, 3}) model-space array; format from the suffix."""
    path = Path(path)
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if path.suffix.lower() == ".pfm":
        write_pfm(path, x)
        return
    v = to_uint8(x)
    img = Image.fromarray(v[0]) if v.shape[0] == 1 else Image.fromarray(v.transpose(1, 2, 0))
    img.save(path)


def write_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() not in (b"PF", b"Pf"):
        raise DataError(f"{path}: not a PFM file")
    channels = 3 if parts[0].strip() == b"PF" else 1
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(parts[3], dtype=dtype, count=w * h * channels)
    arr = arr.reshape(h, w, channels)[::-1]  # rows are stored bottom-to-top
    return arr.transpose(2, 0, 1).astype(np.float64)


def write_pfm(path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype="<f4")
    c, h, w = x.shape
    if c not in (1, 3):
        raise DataError("PFM holds 1 or 3 channels")
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(x.transpose(1, 2, 0)[::-1]).tobytes()
    Path(path).write_bytes(header + body)


def write_pbm(path, bits: np.ndarray) -> None:
    """Packed P4 bitmap of a H×W {0,1} array."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise DataError("PBM expects a 2-D mask")
    h, w = bits.shape
    packed = np.packbits(bits != 0, axis=1)
    Path(path).write_bytes(f"P4\n{w} {h}\n".encode("ascii") + packed.tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 3:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P4":
        raise DataError(f"{path}: not a P4 bitmap")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1  # single whitespace before the raster
    row_bytes = (w + 7) // 8
    raster = np.frombuffer(data, dtype=np.uint8, count=row_bytes * h, offset=pos).reshape(h, row_bytes)
    return np.unpackbits(raster, axis=1)[:, :w]
