"""Dense 4-D tensors in (batch, channels, time, frequency) layout.

Feature maps, filters and on-disk features all use this layout. The BTF1
format stores one tensor: 8-byte magic ``BTENSOR1``, u32 little-endian rank
(always 4), four u32 dims (N, C, T, F), one u8 precision code (0 = float32,
1 = float64), then the raw little-endian values in C order. The same encoding
is used standalone (one tensor per file) and embedded inside checkpoints.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ShapeError

BTF_MAGIC = b"BTENSOR1"
_HEADER = "<8sI4IB"
_HEADER_SIZE = struct.calcsize(_HEADER)
_PRECISION_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_TO_PRECISION = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def check_nctf(a: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate an array as an (N, C, T, F) tensor and return it contiguous."""
    a = np.asarray(a)
    if a.ndim != 4:
        raise ShapeError(f"{name}: expected 4 dims (N,C,T,F), got shape {a.shape}")
    if any(d < 1 for d in a.shape):
        raise ShapeError(f"{name}: all dims must be >= 1, got shape {a.shape}")
    if a.dtype not in _PRECISION_TO_CODE:
        raise ShapeError(f"{name}: dtype must be float32 or float64, got {a.dtype}")
    return np.ascontiguousarray(a)


def pack_btf(a: np.ndarray) -> bytes:
    """Encode one 4-D tensor as BTF1 bytes."""
    a = check_nctf(a)
    code = _PRECISION_TO_CODE[a.dtype]
    header = struct.pack(_HEADER, BTF_MAGIC, 4, *a.shape, code)
    return header + np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes()


def unpack_btf(blob: bytes, where: str = "buffer") -> np.ndarray:
    """Decode BTF1 bytes; raises FormatError on any structural problem."""
    if len(blob) < _HEADER_SIZE:
        raise FormatError(f"{where}: truncated BTF1 header")
    magic, rank, n, c, t, fdim, code = struct.unpack_from(_HEADER, blob)
    if magic != BTF_MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r}")
    if rank != 4:
        raise FormatError(f"{where}: unsupported rank {rank}")
    if code not in _CODE_TO_PRECISION:
        raise FormatError(f"{where}: unknown precision code {code}")
    dtype = _CODE_TO_PRECISION[code]
    shape = (n, c, t, fdim)
    count = n * c * t * fdim
    expected = _HEADER_SIZE + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{where}: payload size {len(blob) - _HEADER_SIZE} does not match "
            f"shape {shape} ({count} values)"
        )
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=_HEADER_SIZE)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def btf_size(blob: bytes, where: str = "buffer") -> int:
    """Total encoded size of the BTF1 record starting at blob[0]."""
    if len(blob) < _HEADER_SIZE:
        raise FormatError(f"{where}: truncated BTF1 header")
    _, _, n, c, t, fdim, code = struct.unpack_from(_HEADER, blob)
    if code not in _CODE_TO_PRECISION:
        raise FormatError(f"{where}: unknown precision code {code}")
    return _HEADER_SIZE + n * c * t * fdim * _CODE_TO_PRECISION[code].itemsize


def write_btf(path, a: np.ndarray) -> None:
    """Write one 4-D tensor to *path* in the BTF1 format."""
    with open(path, "wb") as f:
        f.write(pack_btf(a))


def read_btf(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    return unpack_btf(blob, where=str(path))
