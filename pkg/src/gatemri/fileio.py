"""File formats: MRT1 tensors, checkpoints, and key=value configs.

MRT1 layout: magic bytes ``MRT1``, u8 dtype code (0=float32, 1=float64,
2=complex64 with interleaved re/im), u8 ndim, ndim x u32 little-endian
extents, then the raw little-endian values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MRT1"

_CODE_FOR_DTYPE = {"float32": 0, "float64": 1, "complex64": 2, "complex128": 2}
_DTYPE_FOR_CODE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<c8")}


def tensor_bytes(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    code = _CODE_FOR_DTYPE.get(arr.dtype.name)
    if code is None:
        raise TypeError(f"MRT1 cannot store dtype {arr.dtype}")
    if code == 2:
        arr = arr.astype("<c8")
    else:
        arr = arr.astype(_DTYPE_FOR_CODE[code])
    if arr.ndim > 255:
        raise ValueError("MRT1 supports at most 255 dimensions")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def parse_tensor(buf: bytes, offset: int = 0):
    """Parse one MRT1 record; returns (array, offset past the record)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ValueError("not an MRT1 tensor (bad magic)")
    code, ndim = struct.unpack_from("<BB", buf, offset + 4)
    if code not in _DTYPE_FOR_CODE:
        raise ValueError(f"unknown MRT1 dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}I", buf, offset + 6)
    dtype = _DTYPE_FOR_CODE[code]
    start = offset + 6 + 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    end = start + count * dtype.itemsize
    if end > len(buf):
        raise ValueError("truncated MRT1 tensor")
    arr = np.frombuffer(buf[start:end], dtype=dtype).reshape(shape)
    return arr.copy(), end


def write_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(array))


def read_tensor(path) -> np.ndarray:
    arr, _ = parse_tensor(Path(path).read_bytes())
    return arr


def save_checkpoint(path, header: dict, arrays: dict) -> None:
    """Write a checkpoint: key=value header lines, blank line, then named
    MRT1 tensors ordered lexicographically by name."""
    lines = []
    for key, value in header.items():
        lines.append(f"{key}={value}")
    blob = ("\n".join(lines) + "\n\n").encode("utf-8")
    for name in sorted(arrays):
        blob += name.encode("utf-8") + b"\n" + tensor_bytes(arrays[name])
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (header dict, {name: array})."""
    buf = Path(path).read_bytes()
    sep = buf.find(b"\n\n")
    if sep < 0:
        raise ValueError(f"malformed checkpoint (no header terminator): {path}")
    header = {}
    for line in buf[:sep].decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        header[key] = value
    arrays = {}
    offset = sep + 2
    while offset < len(buf):
        nl = buf.find(b"\n", offset)
        if nl < 0:
            raise ValueError(f"malformed checkpoint (dangling bytes): {path}")
        name = buf[offset:nl].decode("utf-8")
        arr, offset = parse_tensor(buf, nl + 1)
        arrays[name] = arr
    return header, arrays


def write_config(path, mapping: dict) -> None:
    lines = [f"{k}={v}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_config(path) -> dict:
    mapping = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping
