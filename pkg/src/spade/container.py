"""Binary tensor container shared by checkpoints, lens maps, and teacher caches.

Layout: 8-byte magic, u32 LE format version (=1), u64 LE JSON header length H,
H bytes of UTF-8 JSON, then the raw tensor payload. The header carries a
"tensors" list of {name, shape, offset, dtype}; offsets are payload-relative
and 64-byte aligned; tensor bytes are little-endian f32, row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .tensor import F32

VERSION = 1
ALIGN = 64

CHECKPOINT_MAGIC = b"SPADECKP"
LENS_MAGIC = b"SPADELNS"
TEACHER_MAGIC = b"SPADETCH"


def _aligned(offset: int) -> int:
    return (offset + ALIGN - 1) // ALIGN * ALIGN


def write_container(path, magic: bytes, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write tensors in the given (stable) order. Byte-deterministic for
    identical inputs: canonical JSON, fixed alignment padding."""
    if len(magic) != 8:
        raise ValueError(f"magic must be 8 bytes, got {magic!r}")
    entries = []
    offset = 0
    payloads = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=F32)
        offset = _aligned(offset)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "f32"})
        raw = arr.astype("<f4").tobytes()
        payloads.append((offset, raw))
        offset += len(raw)
    header = dict(meta)
    header["tensors"] = entries
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        pos = 0
        for off, raw in payloads:
            f.write(b"\x00" * (off - pos))
            f.write(raw)
            pos = off + len(raw)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as f:
        got_magic = f.read(8)
        if got_magic != magic:
            raise ShapeError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ShapeError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    tensors = {}
    for entry in header.pop("tensors"):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        off = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
        tensors[entry["name"]] = np.ascontiguousarray(arr).reshape(shape).astype(F32)
    return header, tensors
