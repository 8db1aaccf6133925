"""Binary netpbm images: PGM (P5, one channel) and PPM (P6, three channels), maxval 255.

Images are held as float arrays [C, H, W] in [0, 1].  Loading divides by 255;
saving clips to [0, 1], scales by 255 and rounds half to even.
"""

from __future__ import annotations

import os
import re

import numpy as np

MAXVAL = 255
_MAGIC = {b"P5": 1, b"P6": 3}
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


class ImageFormatError(ValueError):
    pass


def _header_tokens(raw: bytes, count: int):
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(raw, pos)
        if not m:
            raise ImageFormatError("truncated header")
        out.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(raw) or raw[pos:pos + 1] not in b" \t\r\n":
        raise ImageFormatError("missing whitespace after header")
    return out, pos + 1


def decode(raw: bytes) -> np.ndarray:
    tokens, start = _header_tokens(raw, 4)
    magic = tokens[0]
    if magic not in _MAGIC:
        raise ImageFormatError(f"unsupported magic {magic!r}; expected P5 or P6")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"non-numeric header fields {tokens[1:]!r}") from None
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"bad dimensions {w}x{h}")
    if maxval != MAXVAL:
        raise ImageFormatError(f"maxval {maxval} unsupported; only {MAXVAL}")
    c = _MAGIC[magic]
    payload = raw[start:]
    need = w * h * c
    if len(payload) != need:
        raise ImageFormatError(f"header says {w}x{h}x{c} = {need} bytes, payload has {len(payload)}")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c)
    return px.transpose(2, 0, 1).astype(np.float64) / MAXVAL


def quantize(image: np.ndarray) -> np.ndarray:
    """[C,H,W] floats -> uint8 with clipping and round-half-even."""
    arr = np.clip(np.asarray(getattr(image, "data", image), dtype=np.float64), 0.0, 1.0)
    return np.rint(arr * MAXVAL).astype(np.uint8)


def encode(image) -> bytes:
    arr = np.asarray(getattr(image, "data", image))
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ImageFormatError(f"expected [1,H,W] or [3,H,W], got {arr.shape}")
    c, h, w = arr.shape
    magic = b"P5" if c == 1 else b"P6"
    px = quantize(arr).transpose(1, 2, 0)
    return magic + f"\n{w} {h}\n{MAXVAL}\n".encode("ascii") + px.tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return decode(raw)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def write_image(path, image) -> None:
    data = encode(image)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
