"""Minimal lossless image I/O: 8-bit RGB PNG and binary PPM (P6).

The PNG decoder handles bit depth 8, color type 2 (truecolor), no
interlace, and all five standard row filters; the encoder writes filter-0
rows compressed with zlib.  Anything else is rejected with a clear error.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .tensor import Tensor

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    pass


def _to_uint8(img) -> np.ndarray:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)


def _from_uint8(arr: np.ndarray) -> Tensor:
    return Tensor(arr.astype(np.float64) / 255.0)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + tag + payload + \
        struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)


def write_png(path, img):
    """Write a (3, H, W) image in [0, 1] (or uint8) as 8-bit RGB PNG."""
    arr = _to_uint8(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageFormatError(f"expected (3, H, W) image, got shape {arr.shape}")
    _, H, W = arr.shape
    rows = arr.transpose(1, 2, 0).reshape(H, W * 3)
    raw = b"".join(b"\x00" + row.tobytes() for row in rows)
    ihdr = struct.pack(">IIBBBBB", W, H, 8, 2, 0, 0, 0)
    blob = _PNG_SIG + _png_chunk(b"IHDR", ihdr) + \
        _png_chunk(b"IDAT", zlib.compress(raw, 6)) + _png_chunk(b"IEND", b"")
    Path(path).write_bytes(blob)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, H: int, W: int, bpp: int) -> np.ndarray:
    stride = W * bpp
    out = np.zeros((H, stride), dtype=np.uint8)
    pos = 0
    for y in range(H):
        ftype = raw[pos]
        pos += 1
        row = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos).astype(np.int64)
        pos += stride
        prev = out[y - 1].astype(np.int64) if y else np.zeros(stride, dtype=np.int64)
        if ftype == 0:
            rec = row
        elif ftype == 1:  # Sub
            rec = row.copy()
            for i in range(bpp, stride):
                rec[i] = (rec[i] + rec[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            rec = (row + prev) & 0xFF
        elif ftype == 3:  # Average
            rec = row.copy()
            for i in range(stride):
                left = rec[i - bpp] if i >= bpp else 0
                rec[i] = (rec[i] + (left + prev[i]) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            rec = row.copy()
            for i in range(stride):
                left = rec[i - bpp] if i >= bpp else 0
                ul = prev[i - bpp] if i >= bpp else 0
                rec[i] = (rec[i] + _paeth(int(left), int(prev[i]), int(ul))) & 0xFF
        else:
            raise ImageFormatError(f"unknown PNG row filter {ftype}")
        out[y] = rec.astype(np.uint8)
    return out


def read_png(path) -> Tensor:
    blob = Path(path).read_bytes()
    if blob[:8] != _PNG_SIG:
        raise ImageFormatError(f"{path}: not a PNG file")
    pos = 8
    header = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack_from(">I", blob, pos)
        tag = blob[pos + 4:pos + 8]
        payload = blob[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            header = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if header is None:
        raise ImageFormatError(f"{path}: missing IHDR chunk")
    W, H, depth, color, _, _, interlace = header
    if depth != 8 or color != 2 or interlace != 0:
        raise ImageFormatError(
            f"{path}: unsupported PNG (need 8-bit RGB non-interlaced, "
            f"got depth={depth} color={color} interlace={interlace})")
    raw = zlib.decompress(idat)
    rows = _unfilter(raw, H, W, 3)
    return _from_uint8(rows.reshape(H, W, 3).transpose(2, 0, 1))


def write_ppm(path, img):
    arr = _to_uint8(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageFormatError(f"expected (3, H, W) image, got shape {arr.shape}")
    _, H, W = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode())
        fh.write(arr.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> Tensor:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P6"):
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    W, H, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=H * W * 3, offset=pos)
    return _from_uint8(data.reshape(H, W, 3).transpose(2, 0, 1))


def read_image(path) -> Tensor:
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return read_png(path)
    if suffix in (".ppm", ".pnm"):
        return read_ppm(path)
    raise ImageFormatError(f"{path}: unsupported extension {suffix!r} (use .png or .ppm)")


def write_image(path, img):
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        write_png(path, img)
    elif suffix in (".ppm", ".pnm"):
        write_ppm(path, img)
    else:
        raise ImageFormatError(f"{path}: unsupported extension {suffix!r} (use .png or .ppm)")
