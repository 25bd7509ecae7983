"""On-disk tensor format: "CLTF" magic, LE u32 rank + extents, u8 dtype tag,
raw little-endian row-major values. Round-trips are bit-exact."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"CLTF"
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor(path, array):
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _TAG_OF:
        raise ContractError(f"only float32/float64 tensors are stored, got {arr.dtype}")
    tag = _TAG_OF[arr.dtype]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<B", tag))
        fh.write(arr.astype(_TAGS[tag], copy=False).tobytes(order="C"))


def read_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContractError(f"{path}: bad magic {blob[:4]!r}")
    (rank,) = struct.unpack_from("<I", blob, 4)
    extents = struct.unpack_from(f"<{rank}I", blob, 8)
    off = 8 + 4 * rank
    (tag,) = struct.unpack_from("<B", blob, off)
    if tag not in _TAGS:
        raise ContractError(f"{path}: unknown dtype tag {tag}")
    dt = _TAGS[tag]
    n = int(np.prod(extents)) if rank else 1
    arr = np.frombuffer(blob, dtype=dt, count=n, offset=off + 1)
    return arr.reshape(extents).astype(dt.newbyteorder("="), copy=True)
