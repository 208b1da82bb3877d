"""Checkpoint container ("BMFACKPT1").

Layout: 8-byte magic ``BMFACKPT``, u32 little-endian format version (1), u32
entry count, then per entry a u32 name length, the UTF-8 dotted parameter
name, and the tensor as an embedded BTF1 record. Entries are sorted by name
so identical states produce identical bytes.

BTF1 stores rank-4 tensors only, so lower-rank values (biases, BN vectors,
linear weights) are padded with trailing singleton dims on save; the loader
returns them padded and the model reshapes to its own expectations.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .tensor import btf_size, pack_btf, unpack_btf

CKPT_MAGIC = b"BMFACKPT"
CKPT_VERSION = 1


def _as_rank4(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim > 4:
        raise FormatError(f"cannot store rank-{a.ndim} tensor in a checkpoint")
    return a.reshape(a.shape + (1,) * (4 - a.ndim))


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(state)))
        for name in sorted(state):
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(pack_btf(_as_rank4(state[name])))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    head = struct.calcsize("<8sII")
    if len(blob) < head:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, count = struct.unpack_from("<8sII", blob)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(
            f"{path}: format version {version} not supported (expected {CKPT_VERSION})"
        )
    out: dict[str, np.ndarray] = {}
    off = head
    for _ in range(count):
        if off + 4 > len(blob):
            raise FormatError(f"{path}: truncated entry header")
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + name_len > len(blob):
            raise FormatError(f"{path}: truncated entry name")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        size = btf_size(blob[off:], where=f"{path}:{name}")
        out[name] = unpack_btf(blob[off:off + size], where=f"{path}:{name}")
        off += size
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return out
