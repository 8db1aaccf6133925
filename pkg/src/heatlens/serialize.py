"""RSVH binary tensor dumps and checkpoint files.

Tensor dump layout (all integers little-endian)::

    b"RSVH" | u32 version | u32 dtype code (0=f32, 1=f64) | u32 rank
    | u64 extent * rank | payload (row-major, little-endian)

Checkpoint layout::

    u64 header length | header (UTF-8 ``key = value`` lines, sorted)
    | u32 tensor count | (u32 name length | UTF-8 name | tensor dump) * count
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO, Dict, Mapping, Tuple, Union

import numpy as np

MAGIC = b"RSVH"
VERSION = 1
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


def write_tensor(fh: BinaryIO, arr) -> None:
    arr = np.asarray(getattr(arr, "data", arr))
    if arr.dtype not in DTYPE_CODES:
        raise FormatError(f"cannot dump dtype {arr.dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<III", VERSION, DTYPE_CODES[arr.dtype], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    version, code, rank = struct.unpack("<III", _read_exact(fh, 12))
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    dt = CODE_DTYPES[code]
    count = int(np.prod(shape)) if rank else 1
    payload = _read_exact(fh, count * dt.itemsize)
    return np.frombuffer(payload, dtype=dt.newbyteorder("<")).astype(dt).reshape(shape)


def dump(path, arr) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def format_header(header: Mapping[str, object]) -> str:
    return "".join(f"{k} = {header[k]}\n" for k in sorted(header))


def parse_header(text: str) -> Dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_checkpoint(path, header: Mapping[str, object], tensors: Mapping[str, np.ndarray]) -> None:
    text = format_header(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(tensors)))
    for name in tensors:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_tensor(buf, tensors[name])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_checkpoint(path) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8))
        header = parse_header(_read_exact(fh, hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, nlen).decode("utf-8")
            tensors[name] = read_tensor(fh)
    return header, tensors
